//! Immutable on-disk aggregate store.
//!
//! A store directory holds:
//!
//! | file | contents |
//! |---|---|
//! | `manifest.json` | format, registry version, weeks with dates, levels, seed, file digests |
//! | `geography.geojson` | the region hierarchy |
//! | `registry.json` | feature registry |
//! | `patient_weeks.csv` | pseudonymous member rows: score, features, attributions |
//! | `aggregates.csv` | region-week rollups, `null` where suppressed |
//! | `histograms.csv` | per-feature bin counts, `null` where suppressed |
//! | `statewide.csv` | weekly threshold and statewide statistics |
//! | `histogram_edges.json` | frozen bin ranges |
//!
//! Loading verifies every digest and rebuilds rollups from the member rows
//! with the same code that wrote them.

use std::collections::{BTreeMap, HashMap};
use std::ops::Range;
use std::path::Path;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::aggregate::{
    aggregate_selection, decompose_values, render_trend_text, statewide_series, top_changes, weekly_thresholds,
    ChangeDecomposition, DecileThreshold, HistogramEdges, Metric, Partitions, PatientWeekTable, RegionWeekAggregate,
    Rollup, TopChanges,
};
use crate::error::{Error, Result};
use crate::features::{feature_names, registry_json, N_FEATURES, REGISTRY_VERSION};
use crate::geography::{load_geography, GeographyIndex, Level};
use crate::io::{file_digest, fmt_opt, sha256_hex};

pub const STORE_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
const GEOGRAPHY_FILE: &str = "geography.geojson";
const REGISTRY_FILE: &str = "registry.json";
const PATIENT_WEEKS_FILE: &str = "patient_weeks.csv";
const AGGREGATES_FILE: &str = "aggregates.csv";
const HISTOGRAMS_FILE: &str = "histograms.csv";
const STATEWIDE_FILE: &str = "statewide.csv";
const EDGES_FILE: &str = "histogram_edges.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekInfo {
    pub week: u32,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub registry_version: String,
    pub seed: u64,
    pub weeks: Vec<WeekInfo>,
    pub levels: Vec<Level>,
    pub metrics: Vec<String>,
    pub n_patient_weeks: usize,
    pub files: BTreeMap<String, String>,
}

/// Provenance recorded in the manifest.
#[derive(Debug, Clone, Copy)]
pub struct BuildInfo {
    pub seed: u64,
    /// Calendar date of day 0.
    pub start_date: NaiveDate,
}

/// One map entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub region_id: String,
    pub value: Option<f64>,
    pub suppressed: bool,
}

#[derive(Debug)]
pub struct AggregateStore {
    pub manifest: Manifest,
    pub geography: GeographyIndex,
    pub table: PatientWeekTable,
    pub thresholds: Vec<DecileThreshold>,
    pub edges: HistogramEdges,
    pub statewide: Vec<RegionWeekAggregate>,
    zcta: (Partitions, Rollup),
    county: (Partitions, Rollup),
}

impl AggregateStore {
    pub fn build(geography: GeographyIndex, table: PatientWeekTable, n_weeks: u32, info: BuildInfo) -> Result<Self> {
        table.validate()?;
        for level in Level::ALL {
            let geo_ids: Vec<&str> = geography.regions(level).iter().map(|r| r.id.as_str()).collect();
            if geo_ids != table.region_ids(level) {
                return Err(Error::Store(format!("{level} ids differ between table and geography")));
            }
        }
        if n_weeks == 0 {
            return Err(Error::Store("store needs at least one week".into()));
        }
        let thresholds = weekly_thresholds(&table, n_weeks)?;
        let edges = HistogramEdges::from_table(&table)?;
        let roll = |level| {
            let p = Partitions::build(&table, level, n_weeks);
            let r = Rollup::build(&table, &p, &thresholds, &edges);
            (p, r)
        };
        let zcta = roll(Level::Zcta);
        let county = roll(Level::County);
        let statewide = statewide_series(&table, n_weeks, &thresholds, &edges);
        let weeks = (0..n_weeks)
            .map(|w| {
                let start = info
                    .start_date
                    .checked_add_days(Days::new(7 * w as u64))
                    .ok_or_else(|| Error::Store("week date out of range".into()))?;
                Ok(WeekInfo {
                    week: w,
                    start,
                    end: start + Days::new(6),
                })
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            format_version: STORE_FORMAT_VERSION,
            registry_version: REGISTRY_VERSION.into(),
            seed: info.seed,
            weeks,
            levels: Level::ALL.to_vec(),
            metrics: Metric::all().map(|m| m.to_string()).collect(),
            n_patient_weeks: table.len(),
            files: BTreeMap::new(),
        };
        Ok(Self {
            manifest,
            geography,
            table,
            thresholds,
            edges,
            statewide,
            zcta,
            county,
        })
    }

    pub fn n_weeks(&self) -> u32 {
        self.manifest.weeks.len() as u32
    }

    fn level(&self, level: Level) -> &(Partitions, Rollup) {
        match level {
            Level::Zcta => &self.zcta,
            Level::County => &self.county,
        }
    }

    pub fn rollup(&self, level: Level) -> &Rollup {
        &self.level(level).1
    }

    /// Resolves region ids at `level` to indexes.
    pub fn resolve(&self, level: Level, ids: &[String]) -> Result<Vec<usize>> {
        if ids.is_empty() {
            return Err(Error::Aggregate("empty selection".into()));
        }
        ids.iter()
            .map(|id| match self.geography.position(level, id) {
                Some(i) => Ok(i),
                None => match self.geography.level_of(id) {
                    Some(other) => Err(Error::MixedLevels(format!("{id} is a {other}, selection is {level}"))),
                    None => Err(Error::UnknownRegion(id.clone())),
                },
            })
            .collect()
    }

    fn check_week(&self, week: u32) -> Result<()> {
        if week >= self.n_weeks() {
            return Err(Error::Aggregate(format!("week {week} outside 0..{}", self.n_weeks())));
        }
        Ok(())
    }

    /// One entry per region at `level`; map-suppressed regions carry no value.
    pub fn layer(&self, level: Level, metric: Metric, week: u32) -> Result<Vec<LayerEntry>> {
        self.check_week(week)?;
        Ok(self
            .rollup(level)
            .week(week)
            .map(|a| LayerEntry {
                region_id: a.region_id.clone(),
                value: if a.map_suppressed { None } else { metric.value(a) },
                suppressed: a.map_suppressed,
            })
            .collect())
    }

    pub fn selection(&self, level: Level, ids: &[String], weeks: Range<u32>) -> Result<Vec<RegionWeekAggregate>> {
        let regions = self.resolve(level, ids)?;
        let (parts, _) = self.level(level);
        aggregate_selection(&self.table, parts, &regions, weeks, &self.thresholds, &self.edges)
    }

    pub fn top_changes(&self, level: Level, ids: &[String], week: u32, k: usize) -> Result<TopChanges> {
        self.check_week(week)?;
        if week == 0 {
            return Err(Error::Aggregate("no previous week for week 0".into()));
        }
        let s = self.selection(level, ids, week - 1..week + 1)?;
        top_changes(&s[0], &s[1], k)
    }

    /// Existing / incoming / outgoing split of a metric's change for a union
    /// of regions between `week − 1` and `week`.
    pub fn decompose_change(&self, level: Level, ids: &[String], metric: Metric, week: u32) -> Result<ChangeDecomposition> {
        self.check_week(week)?;
        if week == 0 {
            return Err(Error::Aggregate("no previous week for week 0".into()));
        }
        let regions = self.resolve(level, ids)?;
        let (parts, _) = self.level(level);
        let values = |w: u32| -> Vec<(u32, f64)> {
            let t = &self.thresholds[w as usize];
            parts
                .union_rows(&regions, w)
                .into_iter()
                .map(|r| {
                    let r = r as usize;
                    (
                        self.table.member[r],
                        metric.patient_value(self.table.score[r], self.table.features_of(r), t),
                    )
                })
                .collect()
        };
        decompose_values(&metric.to_string(), week, &values(week - 1), &values(week))
    }

    pub fn trend_text(&self, level: Level, ids: &[String], metric: Metric, week: u32) -> Result<String> {
        Ok(render_trend_text(&self.decompose_change(level, ids, metric, week)?))
    }

    /// Writes every file, then the manifest with their digests.
    pub fn write(&mut self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.geography.write_geojson(&dir.join(GEOGRAPHY_FILE))?;
        write_json(&dir.join(REGISTRY_FILE), &registry_json())?;
        write_json(&dir.join(EDGES_FILE), &self.edges)?;
        self.write_patient_weeks(&dir.join(PATIENT_WEEKS_FILE))?;
        self.write_aggregates(&dir.join(AGGREGATES_FILE))?;
        self.write_histograms(&dir.join(HISTOGRAMS_FILE))?;
        self.write_statewide(&dir.join(STATEWIDE_FILE))?;
        let mut files = BTreeMap::new();
        for f in [
            GEOGRAPHY_FILE,
            REGISTRY_FILE,
            EDGES_FILE,
            PATIENT_WEEKS_FILE,
            AGGREGATES_FILE,
            HISTOGRAMS_FILE,
            STATEWIDE_FILE,
        ] {
            files.insert(f.to_string(), file_digest(&dir.join(f))?);
        }
        self.manifest.files = files;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    /// Reads a store, verifying digests, and rebuilds the in-memory rollups.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: Manifest = serde_json::from_str(&crate::io::read_to_string(&manifest_path)?)
            .map_err(|e| Error::parse(manifest_path.display().to_string(), e))?;
        if manifest.format_version != STORE_FORMAT_VERSION {
            return Err(Error::Store(format!("unsupported store format {}", manifest.format_version)));
        }
        if manifest.registry_version != REGISTRY_VERSION {
            return Err(Error::RegistryMismatch {
                expected: REGISTRY_VERSION.into(),
                found: manifest.registry_version,
            });
        }
        for (f, digest) in &manifest.files {
            if &file_digest(&dir.join(f))? != digest {
                return Err(Error::Store(format!("{f} does not match its manifest digest")));
            }
        }
        let geography = load_geography(&dir.join(GEOGRAPHY_FILE))?;
        let table = read_patient_weeks(&dir.join(PATIENT_WEEKS_FILE), &geography)?;
        let first = manifest
            .weeks
            .first()
            .ok_or_else(|| Error::Store("manifest lists no weeks".into()))?;
        let info = BuildInfo {
            seed: manifest.seed,
            start_date: first.start,
        };
        let mut store = Self::build(geography, table, manifest.weeks.len() as u32, info)?;
        let edges: HistogramEdges = serde_json::from_str(&crate::io::read_to_string(&dir.join(EDGES_FILE))?)
            .map_err(|e| Error::parse(EDGES_FILE, e))?;
        if edges != store.edges {
            return Err(Error::Store("histogram edges differ from member rows".into()));
        }
        store.manifest.files = manifest.files.clone();
        if store.manifest != manifest {
            return Err(Error::Store("manifest differs from member rows".into()));
        }
        Ok(store)
    }

    fn write_patient_weeks(&self, path: &Path) -> Result<()> {
        let t = &self.table;
        let mut header = vec!["member".to_string(), "week".into(), "zcta".into(), "county".into(), "scaled_score".into()];
        header.extend(feature_names().map(String::from));
        header.extend(feature_names().map(|n| format!("phi_{n}")));
        write_records(path, &header, (0..t.len()).map(|i| {
            let mut rec = vec![
                t.member[i].to_string(),
                t.week[i].to_string(),
                t.zcta_ids[t.zcta[i] as usize].clone(),
                t.county_ids[t.county[i] as usize].clone(),
                t.score[i].to_string(),
            ];
            rec.extend(t.features_of(i).iter().map(f64::to_string));
            rec.extend(t.phi_of(i).iter().map(f64::to_string));
            rec
        }))
    }

    fn write_aggregates(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = [
            "level",
            "region_id",
            "week",
            "n_patients",
            "map_suppressed",
            "mean_scaled_score",
            "top_decile_share",
        ]
        .map(String::from)
        .to_vec();
        header.extend(feature_names().map(|n| format!("mean_{n}")));
        header.extend(feature_names().map(|n| format!("mean_phi_{n}")));
        header.extend(feature_names().map(|n| format!("mean_abs_phi_{n}")));
        let rows = Level::ALL.iter().flat_map(|&l| self.rollup(l).cells.iter()).map(|a| {
            let mut rec = vec![
                a.level.to_string(),
                a.region_id.clone(),
                a.week.to_string(),
                a.n_patients.to_string(),
                a.map_suppressed.to_string(),
                fmt_opt(a.mean_scaled_score),
                fmt_opt(a.top_decile_share),
            ];
            for v in [&a.feature_means, &a.mean_phi, &a.mean_abs_phi] {
                rec.extend((0..N_FEATURES).map(|f| fmt_opt(v.as_ref().map(|m| m[f]))));
            }
            rec
        });
        write_records(path, &header, rows)
    }

    fn write_histograms(&self, path: &Path) -> Result<()> {
        let mut header: Vec<String> = ["level", "region_id", "week", "feature"].map(String::from).to_vec();
        header.extend((0..crate::aggregate::N_BINS).map(|b| format!("bin_{b}")));
        let names: Vec<&str> = feature_names().collect();
        let names = &names;
        let rows = Level::ALL
            .iter()
            .flat_map(|&l| self.rollup(l).cells.iter())
            .flat_map(|a| {
                (0..N_FEATURES).map(move |f| {
                    let mut rec = vec![a.level.to_string(), a.region_id.clone(), a.week.to_string(), names[f].to_string()];
                    match &a.histograms {
                        Some(h) => rec.extend(h[f].iter().map(|c| c.map_or_else(|| "null".into(), |c| c.to_string()))),
                        None => rec.extend((0..crate::aggregate::N_BINS).map(|_| "null".to_string())),
                    }
                    rec
                })
            });
        write_records(path, &header, rows)
    }

    fn write_statewide(&self, path: &Path) -> Result<()> {
        let header = ["week", "threshold", "n_patients", "mean_scaled_score", "top_decile_share"].map(String::from);
        let rows = self.statewide.iter().zip(&self.thresholds).map(|(a, t)| {
            vec![
                a.week.to_string(),
                t.threshold.to_string(),
                a.n_patients.to_string(),
                fmt_opt(a.mean_scaled_score),
                fmt_opt(a.top_decile_share),
            ]
        });
        write_records(path, &header, rows)
    }
}

/// SHA-256 of the manifest, which itself lists every file digest.
pub fn store_digest(dir: &Path) -> Result<String> {
    let bytes = std::fs::read(dir.join(MANIFEST_FILE)).map_err(|e| Error::io(dir.join(MANIFEST_FILE), e))?;
    Ok(sha256_hex(&bytes))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path.display().to_string(), e))?;
    text.push('\n');
    crate::io::write_string(path, &text)
}

fn write_records(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let ctx = path.display().to_string();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
    w.write_record(header).map_err(|e| Error::parse(&*ctx, e))?;
    for rec in rows {
        w.write_record(&rec).map_err(|e| Error::parse(&*ctx, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_patient_weeks(path: &Path, geo: &GeographyIndex) -> Result<PatientWeekTable> {
    let ctx = path.display().to_string();
    let ids = |level| -> Vec<String> { geo.regions(level).iter().map(|r| r.id.clone()).collect() };
    let mut t = PatientWeekTable::with_regions(ids(Level::Zcta), ids(Level::County));
    let index = |list: &[String]| -> HashMap<String, u32> {
        list.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect()
    };
    let (zi, ci) = (index(&t.zcta_ids), index(&t.county_ids));
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
    let width = r.headers().map_err(|e| Error::parse(&*ctx, e))?.len();
    if width != 5 + 2 * N_FEATURES {
        return Err(Error::RegistryMismatch {
            expected: REGISTRY_VERSION.into(),
            found: format!("patient-week file with {width} columns"),
        });
    }
    let mut x = [0.0; N_FEATURES];
    let mut phi = [0.0; N_FEATURES];
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::parse(&*ctx, e))?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| Error::parse(&*ctx, e));
        for f in 0..N_FEATURES {
            x[f] = num(5 + f)?;
            phi[f] = num(5 + N_FEATURES + f)?;
        }
        let int = |i: usize| rec[i].parse::<u32>().map_err(|e| Error::parse(&*ctx, e));
        let z = *zi.get(&rec[2]).ok_or_else(|| Error::UnknownRegion(rec[2].to_string()))?;
        let c = *ci.get(&rec[3]).ok_or_else(|| Error::UnknownRegion(rec[3].to_string()))?;
        t.push(int(0)?, int(1)?, z, c, num(4)?, &x, &phi);
    }
    Ok(t)
}
