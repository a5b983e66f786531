//! Structured-text (JSON) model files.
//!
//! ```text
//! { "version": 1, "base_margin": ..., "registry_version": "...", "n_trees": N,
//!   "trees": [ { "nodes": [ { "id": 0, "kind": "split", "feature": .., "threshold": ..,
//!                            "left": 1, "right": 4, "cover": .. },
//!                          { "id": 1, "kind": "leaf", "value": .., "cover": .. }, ... ] } ] }
//! ```
//!
//! Nodes are listed in pre-order. Floats are written in shortest round-trip
//! form, so save → load → save is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Tree, TreeEnsemble, TreeNode};
use crate::error::{Error, Result};
use crate::features::REGISTRY_VERSION;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    base_margin: f64,
    registry_version: String,
    n_trees: usize,
    trees: Vec<TreeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TreeRecord {
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum NodeRecord {
    Split {
        id: usize,
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        cover: f64,
    },
    Leaf {
        id: usize,
        value: f64,
        cover: f64,
    },
}

pub fn to_model_text(model: &TreeEnsemble) -> Result<String> {
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        base_margin: model.base_margin,
        registry_version: model.registry_version.clone(),
        n_trees: model.trees.len(),
        trees: model
            .trees
            .iter()
            .map(|t| TreeRecord {
                nodes: t
                    .nodes()
                    .iter()
                    .enumerate()
                    .map(|(id, n)| match *n {
                        TreeNode::Split {
                            feature,
                            threshold,
                            left,
                            right,
                            cover,
                        } => NodeRecord::Split {
                            id,
                            feature,
                            threshold,
                            left,
                            right,
                            cover,
                        },
                        TreeNode::Leaf { value, cover } => NodeRecord::Leaf { id, value, cover },
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&file).map_err(|e| Error::parse("model", e))?;
    text.push('\n');
    Ok(text)
}

pub fn parse_model(text: &str) -> Result<TreeEnsemble> {
    let file: ModelFile = serde_json::from_str(text).map_err(|e| Error::parse("model file", e))?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(Error::Model(format!("unsupported model format version {}", file.version)));
    }
    if file.registry_version != REGISTRY_VERSION {
        return Err(Error::RegistryMismatch {
            expected: REGISTRY_VERSION.into(),
            found: file.registry_version,
        });
    }
    if file.n_trees != file.trees.len() {
        return Err(Error::Model(format!(
            "header declares {} trees but file has {}",
            file.n_trees,
            file.trees.len()
        )));
    }
    let mut trees = Vec::with_capacity(file.trees.len());
    for (t, rec) in file.trees.into_iter().enumerate() {
        let mut nodes = Vec::with_capacity(rec.nodes.len());
        for (pos, n) in rec.nodes.into_iter().enumerate() {
            let (id, node) = match n {
                NodeRecord::Split {
                    id,
                    feature,
                    threshold,
                    left,
                    right,
                    cover,
                } => (
                    id,
                    TreeNode::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        cover,
                    },
                ),
                NodeRecord::Leaf { id, value, cover } => (id, TreeNode::Leaf { value, cover }),
            };
            if id != pos {
                return Err(Error::Model(format!("tree {t}: node id {id} at position {pos}")));
            }
            nodes.push(node);
        }
        trees.push(
            Tree::from_nodes(nodes).map_err(|e| Error::Model(format!("tree {t}: {e}")))?,
        );
    }
    let mut model = TreeEnsemble::new(trees, file.base_margin)?;
    model.registry_version = file.registry_version;
    Ok(model)
}

pub fn save_model(model: &TreeEnsemble, path: &Path) -> Result<()> {
    crate::io::write_string(path, &to_model_text(model)?)
}

pub fn load_model(path: &Path) -> Result<TreeEnsemble> {
    parse_model(&crate::io::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TreeEnsemble {
        let t = Tree::split(
            4,
            0.1 + 0.2,
            Tree::leaf(-0.123456789012345, 0.3),
            Tree::split(19, 1e-300, Tree::leaf(1.0 / 3.0, 0.7), Tree::leaf(2.5, 1.1)),
        );
        TreeEnsemble::new(vec![t.clone(), t], -5.521460917862246).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let m = sample();
        save_model(&m, &p1).unwrap();
        let back = load_model(&p1).unwrap();
        assert_eq!(back, m);
        save_model(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_feature_index_20() {
        let text = to_model_text(&sample()).unwrap().replacen("\"feature\": 4", "\"feature\": 20", 1);
        let err = parse_model(&text).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn rejects_truncated_file() {
        let text = to_model_text(&sample()).unwrap();
        let err = parse_model(&text[..text.len() / 2]).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn rejects_registry_mismatch() {
        let text = to_model_text(&sample())
            .unwrap()
            .replace(REGISTRY_VERSION, "other/v9");
        let err = parse_model(&text).unwrap_err();
        assert!(matches!(err, Error::RegistryMismatch { .. }), "{err}");
    }

    #[test]
    fn rejects_tree_count_mismatch() {
        let text = to_model_text(&sample()).unwrap().replace("\"n_trees\": 2", "\"n_trees\": 3");
        assert!(parse_model(&text).is_err());
    }
}
