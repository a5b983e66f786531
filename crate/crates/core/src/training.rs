//! Outcome labels, the patient-level train/validation split, and validation
//! summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{OutcomeRecord, OUTCOME_WINDOW_DAYS};
use crate::error::{Error, Result};
use crate::features::{week_end_day, FeatureTable, N_FEATURES};
use crate::metrics::{auroc, rate_by_score_bin, spearman};
use crate::model::{train, Dataset, TrainParams, TreeEnsemble};

/// Share of patients, out of ten, held out for validation.
pub const VALIDATION_TENTHS: u8 = 3;
pub const FIG_BINS: usize = 20;

/// Death within the outcome window after the end of `week`.
pub fn outcome_label(death_day: Option<i32>, week: u32) -> bool {
    let end = week_end_day(week);
    death_day.is_some_and(|d| d > end && d <= end + OUTCOME_WINDOW_DAYS)
}

/// Deterministic split on a hash of the patient id, so every week of a
/// patient lands on the same side.
pub fn is_validation(patient_id: &str) -> bool {
    Sha256::digest(patient_id.as_bytes())[0] % 10 < VALIDATION_TENTHS
}

/// Row-major matrix and labels for one side of the split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelledRows {
    pub features: Vec<f64>,
    pub labels: Vec<bool>,
}

impl LabelledRows {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y).count()
    }

    pub fn dataset(&self) -> Result<Dataset<'_>> {
        Dataset::new(&self.features, N_FEATURES, &self.labels)
    }
}

/// Splits labelled patient-weeks. With `week_stride = k` only weeks that are
/// multiples of `k` are kept, which thins the heavily autocorrelated rows.
pub fn split_rows(table: &FeatureTable, outcomes: &[OutcomeRecord], week_stride: u32) -> Result<(LabelledRows, LabelledRows)> {
    if week_stride == 0 {
        return Err(Error::Training("week stride must be positive".into()));
    }
    let deaths: HashMap<&str, Option<i32>> = outcomes
        .iter()
        .map(|o| (o.patient_id.as_str(), o.death_day))
        .collect();
    let (mut fit, mut val) = (LabelledRows::default(), LabelledRows::default());
    for row in table.rows.iter().filter(|r| r.week % week_stride == 0) {
        let death = *deaths
            .get(row.patient_id.as_str())
            .ok_or_else(|| Error::Training(format!("no outcome for patient {}", row.patient_id)))?;
        let side = if is_validation(&row.patient_id) { &mut val } else { &mut fit };
        side.features.extend_from_slice(&row.x);
        side.labels.push(outcome_label(death, row.week));
    }
    Ok((fit, val))
}

/// Validation summary: discrimination plus the shape of the event rate
/// across score percentiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub train_rows: usize,
    pub train_positives: usize,
    pub validation_rows: usize,
    pub validation_positives: usize,
    pub auroc: f64,
    /// Event rate per score-percentile bin, ascending score.
    pub rate_by_bin: Vec<f64>,
    /// Spearman correlation of bin rate with bin index.
    pub bin_spearman: f64,
}

pub fn validate(model: &TreeEnsemble, rows: &LabelledRows, n_bins: usize) -> Result<ValidationReport> {
    let scores = (0..rows.len())
        .map(|i| model.predict_margin(&rows.features[i * N_FEATURES..(i + 1) * N_FEATURES]))
        .collect::<Result<Vec<_>>>()?;
    let rate_by_bin = rate_by_score_bin(&scores, &rows.labels, n_bins);
    let index: Vec<f64> = (0..n_bins).map(|b| b as f64).collect();
    Ok(ValidationReport {
        train_rows: 0,
        train_positives: 0,
        validation_rows: rows.len(),
        validation_positives: rows.positives(),
        auroc: auroc(&scores, &rows.labels)?,
        bin_spearman: spearman(&rate_by_bin, &index),
        rate_by_bin,
    })
}

/// Trains on the fit side and reports on the validation side.
pub fn fit_and_validate(
    table: &FeatureTable,
    outcomes: &[OutcomeRecord],
    params: &TrainParams,
    week_stride: u32,
) -> Result<(TreeEnsemble, ValidationReport)> {
    let (fit, val) = split_rows(table, outcomes, week_stride)?;
    let model = train(&fit.dataset()?, params)?;
    let mut report = validate(&model, &val, FIG_BINS)?;
    report.train_rows = fit.len();
    report.train_positives = fit.positives();
    Ok((model, report))
}
