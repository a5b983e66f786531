//! Per-patient-week scores and attributions.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::{tree_shap, ShapVector};
use crate::features::{feature_names, FeatureTable, N_FEATURES};
use crate::model::{scale_score, TreeEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScore {
    pub patient_id: String,
    pub week: u32,
    pub probability: f64,
    /// `probability × 10,000`.
    pub scaled: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapRow {
    pub patient_id: String,
    pub week: u32,
    pub shap: ShapVector,
}

pub const SCORES_FILE: &str = "scores.csv";
pub const SHAP_FILE: &str = "shap.csv";

/// Scores and explains every row of the feature table, preserving its order.
pub fn score_table(model: &TreeEnsemble, table: &FeatureTable) -> Result<(Vec<RiskScore>, Vec<ShapRow>)> {
    let out: Vec<(RiskScore, ShapRow)> = table
        .rows
        .par_iter()
        .map(|r| {
            let probability = model.predict_probability(&r.x)?;
            let shap = tree_shap(model, &r.x)?;
            Ok((
                RiskScore {
                    patient_id: r.patient_id.clone(),
                    week: r.week,
                    probability,
                    scaled: scale_score(probability),
                },
                ShapRow {
                    patient_id: r.patient_id.clone(),
                    week: r.week,
                    shap,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(out.into_iter().unzip())
}

pub fn write_scores(path: &Path, scores: &[RiskScore]) -> Result<()> {
    crate::io::write_csv(path, scores)
}

pub fn read_scores(path: &Path) -> Result<Vec<RiskScore>> {
    crate::io::read_csv(path)
}

/// Attribution file: `patient_id, week, base_value, phi_<feature>...` in
/// registry order.
pub fn write_shap(path: &Path, rows: &[ShapRow]) -> Result<()> {
    let ctx = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
    let mut header = vec!["patient_id".to_string(), "week".into(), "base_value".into()];
    header.extend(feature_names().map(|n| format!("phi_{n}")));
    w.write_record(&header).map_err(|e| Error::parse(&*ctx, e))?;
    for r in rows {
        let mut rec = vec![r.patient_id.clone(), r.week.to_string(), r.shap.base_value.to_string()];
        rec.extend(r.shap.phi.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| Error::parse(&*ctx, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_shap(path: &Path) -> Result<Vec<ShapRow>> {
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
    let width = r.headers().map_err(|e| Error::parse(&*ctx, e))?.len();
    if width != 3 + N_FEATURES {
        return Err(Error::parse(&*ctx, format!("expected {} columns, found {width}", 3 + N_FEATURES)));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(&*ctx, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::parse(&*ctx, e));
        let phi = (0..N_FEATURES).map(|i| num(3 + i)).collect::<Result<Vec<_>>>()?;
        out.push(ShapRow {
            patient_id: rec[0].to_string(),
            week: rec[1].parse().map_err(|e| Error::parse(&*ctx, e))?,
            shap: ShapVector {
                phi,
                base_value: num(2)?,
            },
        });
    }
    Ok(out)
}
