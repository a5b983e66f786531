use std::path::Path;

use anyhow::{Context, Result};
use regionrisk::cohort::CohortConfig;
use regionrisk::model::TrainParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub rows: usize,
    pub cols: usize,
    pub counties_per_side: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            counties_per_side: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_cover: f64,
    pub lambda: f64,
    pub max_bins: usize,
    /// Keep every k-th week when fitting.
    pub week_stride: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            n_trees: p.n_trees,
            max_depth: p.max_depth,
            learning_rate: p.learning_rate,
            min_cover: p.min_cover,
            lambda: p.lambda,
            max_bins: p.max_bins,
            week_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn params(&self) -> TrainParams {
        TrainParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            learning_rate: self.learning_rate,
            min_cover: self.min_cover,
            lambda: self.lambda,
            max_bins: self.max_bins,
        }
    }
}

/// Everything a run needs, as stored in `config.toml`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub grid: GridConfig,
    pub cohort: CohortConfig,
    pub train: TrainConfig,
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).context("serializing config")?;
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_toml() {
        let mut c = PipelineConfig {
            seed: 9,
            ..Default::default()
        };
        c.cohort.shock = Some(regionrisk::cohort::Shock {
            region_id: "10001".into(),
            week: 4,
            intensity: 0.5,
        });
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<PipelineConfig>(&text).unwrap(), c);
        assert_eq!(toml::from_str::<PipelineConfig>(&toml::to_string(&PipelineConfig::default()).unwrap()).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_files_fill_defaults() {
        let c: PipelineConfig = toml::from_str("seed = 3\n[cohort]\nn_patients = 10\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.cohort.n_patients, 10);
        assert_eq!(c.grid, GridConfig::default());
        assert!(toml::from_str::<PipelineConfig>("sead = 3\n").is_err());
    }
}
