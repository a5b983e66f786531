//! Pipeline stages behind the `regionrisk` command.
//!
//! Every stage reads the previous stage's files from one work directory and
//! returns a JSON summary of what it wrote.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use regionrisk::aggregate::{Metric, PatientWeekTable};
use regionrisk::cohort::{generate_cohort, CohortTables};
use regionrisk::features::{build_feature_table, registry_json, FeatureTable, FEATURES_FILE, REGISTRY_FILE};
use regionrisk::geography::{load_geography, synth_grid_geography, GeographyIndex, Level};
use regionrisk::model::{load_model, save_model};
use regionrisk::scoring::{read_scores, read_shap, score_table, write_scores, write_shap, SCORES_FILE, SHAP_FILE};
use regionrisk::store::{store_digest, AggregateStore, BuildInfo};
use regionrisk::training::fit_and_validate;
use serde_json::{json, Value};

pub mod config;

pub use config::PipelineConfig;

pub const CONFIG_FILE: &str = "config.toml";
pub const GEOGRAPHY_FILE: &str = "geography.geojson";
pub const MODEL_FILE: &str = "model.json";
pub const VALIDATION_FILE: &str = "validation.json";
pub const STORE_DIR: &str = "store";

/// File layout of a work directory.
#[derive(Debug, Clone)]
pub struct Work {
    pub dir: PathBuf,
}

impl Work {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn store(&self) -> PathBuf {
        self.path(STORE_DIR)
    }

    /// The config written by `synth`, or defaults before that.
    pub fn config(&self) -> Result<PipelineConfig> {
        let p = self.path(CONFIG_FILE);
        if p.exists() {
            PipelineConfig::read(&p)
        } else {
            Ok(PipelineConfig::default())
        }
    }

    fn geography(&self) -> Result<GeographyIndex> {
        Ok(load_geography(&self.path(GEOGRAPHY_FILE))?)
    }

    fn features(&self) -> Result<FeatureTable> {
        Ok(FeatureTable::read_csv(&self.path(FEATURES_FILE))?)
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Geography, config and cohort files. A given GeoJSON replaces the grid.
pub fn synth(work: &Work, config: &PipelineConfig, geography: Option<&Path>) -> Result<Value> {
    std::fs::create_dir_all(&work.dir).with_context(|| format!("creating {}", work.dir.display()))?;
    let geo = match geography {
        Some(p) => load_geography(p)?,
        None => synth_grid_geography(config.grid.rows, config.grid.cols, config.grid.counties_per_side, config.seed)?,
    };
    let cohort = generate_cohort(&geo, &config.cohort, config.seed)?;
    cohort.validate(&geo)?;
    geo.write_geojson(&work.path(GEOGRAPHY_FILE))?;
    config.write(&work.path(CONFIG_FILE))?;
    cohort.write_csv(&work.dir)?;
    Ok(json!({
        "seed": config.seed,
        "zctas": geo.regions(Level::Zcta).len(),
        "counties": geo.regions(Level::County).len(),
        "patients": cohort.patients.len(),
        "events": cohort.events.len(),
        "deaths": cohort.outcomes.iter().filter(|o| o.death_day.is_some()).count(),
    }))
}

pub fn features(work: &Work, config: &PipelineConfig) -> Result<Value> {
    let tables = CohortTables::read_csv(&work.dir)?;
    let table = build_feature_table(&tables, config.cohort.weeks)?;
    table.write_csv(&work.path(FEATURES_FILE))?;
    write_json(&work.path(REGISTRY_FILE), &registry_json())?;
    Ok(json!({ "patient_weeks": table.rows.len(), "weeks": config.cohort.weeks }))
}

pub fn train(work: &Work, config: &PipelineConfig) -> Result<Value> {
    let table = work.features()?;
    let tables = CohortTables::read_csv(&work.dir)?;
    let (model, report) = fit_and_validate(&table, &tables.outcomes, &config.train.params(), config.train.week_stride)?;
    save_model(&model, &work.path(MODEL_FILE))?;
    let report = serde_json::to_value(&report)?;
    write_json(&work.path(VALIDATION_FILE), &report)?;
    Ok(json!({ "trees": model.trees.len(), "validation": report }))
}

pub fn score(work: &Work) -> Result<Value> {
    let model = load_model(&work.path(MODEL_FILE))?;
    let table = work.features()?;
    let (scores, shap) = score_table(&model, &table)?;
    write_scores(&work.path(SCORES_FILE), &scores)?;
    write_shap(&work.path(SHAP_FILE), &shap)?;
    Ok(json!({ "scored": scores.len() }))
}

pub fn aggregate(work: &Work, config: &PipelineConfig) -> Result<Value> {
    let geo = work.geography()?;
    let table = work.features()?;
    let scores = read_scores(&work.path(SCORES_FILE))?;
    let shap = read_shap(&work.path(SHAP_FILE))?;
    let rows = PatientWeekTable::from_scored(&geo, &table, &scores, &shap)?;
    let info = BuildInfo {
        seed: config.seed,
        start_date: config.cohort.start_date,
    };
    let mut store = AggregateStore::build(geo, rows, config.cohort.weeks, info)?;
    let dir = work.store();
    store.write(&dir)?;
    Ok(json!({
        "store": dir.display().to_string(),
        "digest": store_digest(&dir)?,
        "patient_weeks": store.table.len(),
    }))
}

/// Runs `synth` through `aggregate`.
pub fn run_all(work: &Work, config: &PipelineConfig) -> Result<Value> {
    let synth = synth(work, config, None)?;
    let features = features(work, config)?;
    let train = train(work, config)?;
    let score = score(work)?;
    let aggregate = aggregate(work, config)?;
    Ok(json!({ "synth": synth, "features": features, "train": train, "score": score, "aggregate": aggregate }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportFormat {
    Csv,
    Geojson,
}

/// One map layer, one row or feature per region.
pub fn export(store_dir: &Path, level: Level, metric: &str, week: u32, format: ExportFormat, out: &mut dyn Write) -> Result<Value> {
    let store = AggregateStore::load(store_dir)?;
    let metric: Metric = metric.parse()?;
    if week >= store.n_weeks() {
        bail!("week {week} outside 0..{}", store.n_weeks());
    }
    let layer = store.layer(level, metric, week)?;
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["region_id", "level", "week", "metric", "value", "suppressed"])?;
            for e in &layer {
                w.write_record([
                    e.region_id.clone(),
                    level.to_string(),
                    week.to_string(),
                    metric.to_string(),
                    e.value.map_or_else(|| "null".into(), |v| v.to_string()),
                    e.suppressed.to_string(),
                ])?;
            }
            w.flush()?;
        }
        ExportFormat::Geojson => {
            let mut geo = store.geography.to_geojson(Some(level));
            let features = geo["features"].as_array_mut().context("geojson without features")?;
            for (f, e) in features.iter_mut().zip(&layer) {
                let props = f["properties"].as_object_mut().context("feature without properties")?;
                props.insert("metric".into(), json!(metric.to_string()));
                props.insert("week".into(), json!(week));
                props.insert("value".into(), json!(e.value));
                props.insert("suppressed".into(), json!(e.suppressed));
            }
            serde_json::to_writer(&mut *out, &geo)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(json!({ "regions": layer.len(), "suppressed": layer.iter().filter(|e| e.suppressed).count() }))
}
