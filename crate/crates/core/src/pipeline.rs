//! All batch stages in memory, from cohort to aggregate store.

use crate::aggregate::PatientWeekTable;
use crate::cohort::{generate_cohort, CohortConfig, CohortTables};
use crate::error::Result;
use crate::features::{build_feature_table, FeatureTable};
use crate::geography::GeographyIndex;
use crate::model::{TrainParams, TreeEnsemble};
use crate::scoring::score_table;
use crate::store::{AggregateStore, BuildInfo};
use crate::training::{fit_and_validate, ValidationReport};

#[derive(Debug)]
pub struct PipelineOutput {
    pub cohort: CohortTables,
    pub features: FeatureTable,
    pub model: TreeEnsemble,
    pub report: ValidationReport,
    pub store: AggregateStore,
}

/// Synthesizes, featurizes, trains on the fit split, scores every
/// patient-week, and builds the store.
pub fn run_pipeline(
    geo: &GeographyIndex,
    config: &CohortConfig,
    seed: u64,
    params: &TrainParams,
    week_stride: u32,
) -> Result<PipelineOutput> {
    let cohort = CohortTables::from(generate_cohort(geo, config, seed)?);
    let features = build_feature_table(&cohort, config.weeks)?;
    let (model, report) = fit_and_validate(&features, &cohort.outcomes, params, week_stride)?;
    let store = store_from_model(geo, &features, &model, config, seed)?;
    Ok(PipelineOutput {
        cohort,
        features,
        model,
        report,
        store,
    })
}

/// Scores `features` with `model` and builds the store.
pub fn store_from_model(
    geo: &GeographyIndex,
    features: &FeatureTable,
    model: &TreeEnsemble,
    config: &CohortConfig,
    seed: u64,
) -> Result<AggregateStore> {
    let (scores, shap) = score_table(model, features)?;
    let table = PatientWeekTable::from_scored(geo, features, &scores, &shap)?;
    let info = BuildInfo {
        seed,
        start_date: config.start_date,
    };
    AggregateStore::build(geo.clone(), table, config.weeks, info)
}
