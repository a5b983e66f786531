//! Region-week rollups with small-cell suppression.
//!
//! Every statistic for a region-week (or a union of regions) is computed from
//! its member patient-weeks by one [`Accumulator`], fed in ascending table
//! order. Prebuilt rollups and on-demand selections therefore agree bit for
//! bit. Suppression rules:
//!
//! * fewer than [`MIN_CELL`] patients: every statistic is null;
//! * fewer than [`MIN_MAP_CELL`] patients: the region is hidden on the map;
//! * a histogram bin holding fewer than [`MIN_CELL`] patients is null.

mod change;
mod decile;
mod table;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use change::{
    decompose_values, fmt_sig2, render_trend_text, top_changes, ChangeDecomposition, FeatureChange, GroupSizes,
    TopChanges,
};
pub use decile::{nearest_rank_90, statewide_decile, DecileThreshold, MIN_DECILE_POPULATION};
pub use table::{Partitions, PatientWeekTable};

use crate::error::{Error, Result};
use crate::features::{feature_index, REGISTRY, N_FEATURES};
use crate::geography::Level;

pub const MIN_CELL: usize = 5;
pub const MIN_MAP_CELL: usize = 20;
pub const N_BINS: usize = 20;
pub const STATEWIDE_ID: &str = "statewide";

/// Metric shown on the map and in time series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    MeanScaledScore,
    TopDecileShare,
    Feature(usize),
}

impl Metric {
    pub fn all() -> impl Iterator<Item = Metric> {
        [Metric::MeanScaledScore, Metric::TopDecileShare]
            .into_iter()
            .chain((0..N_FEATURES).map(Metric::Feature))
    }

    pub fn value(self, agg: &RegionWeekAggregate) -> Option<f64> {
        match self {
            Metric::MeanScaledScore => agg.mean_scaled_score,
            Metric::TopDecileShare => agg.top_decile_share,
            Metric::Feature(i) => agg.feature_means.as_ref().map(|m| m[i]),
        }
    }

    /// The per-patient quantity whose mean is this metric.
    pub fn patient_value(self, score: f64, x: &[f64], threshold: &DecileThreshold) -> f64 {
        match self {
            Metric::MeanScaledScore => score,
            Metric::TopDecileShare => f64::from(u8::from(threshold.contains(score))),
            Metric::Feature(i) => x[i],
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::MeanScaledScore => f.write_str("mean_scaled_score"),
            Metric::TopDecileShare => f.write_str("top_decile_share"),
            Metric::Feature(i) => write!(f, "feature:{}", REGISTRY[*i].name),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_scaled_score" => Ok(Metric::MeanScaledScore),
            "top_decile_share" => Ok(Metric::TopDecileShare),
            _ => s
                .strip_prefix("feature:")
                .and_then(feature_index)
                .map(Metric::Feature)
                .ok_or_else(|| Error::Aggregate(format!("unknown metric {s:?}"))),
        }
    }
}

/// Equal-width bins per feature, fixed from the first week's statewide range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramEdges {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl HistogramEdges {
    pub fn from_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut lo = vec![f64::INFINITY; N_FEATURES];
        let mut hi = vec![f64::NEG_INFINITY; N_FEATURES];
        let mut any = false;
        for x in rows {
            any = true;
            for f in 0..N_FEATURES {
                lo[f] = lo[f].min(x[f]);
                hi[f] = hi[f].max(x[f]);
            }
        }
        if !any {
            return Err(Error::Aggregate("no rows to fix histogram edges".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Edges from the earliest week present in the table.
    pub fn from_table(table: &PatientWeekTable) -> Result<Self> {
        let first = table.week.iter().min().copied();
        Self::from_rows((0..table.len()).filter(|&i| Some(table.week[i]) == first).map(|i| table.features_of(i)))
    }

    /// Values outside the frozen range land in the end bins.
    pub fn bin(&self, feature: usize, v: f64) -> usize {
        let (lo, hi) = (self.lo[feature], self.hi[feature]);
        if hi <= lo {
            return 0;
        }
        let b = ((v - lo) / (hi - lo) * N_BINS as f64).floor();
        if b.is_nan() || b < 0.0 {
            0
        } else {
            (b as usize).min(N_BINS - 1)
        }
    }

    pub fn edges(&self, feature: usize) -> Vec<f64> {
        let (lo, hi) = (self.lo[feature], self.hi[feature]);
        (0..=N_BINS).map(|k| lo + (hi - lo) * k as f64 / N_BINS as f64).collect()
    }
}

/// Statistics for one region (or union of regions) in one week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionWeekAggregate {
    pub region_id: String,
    pub level: Level,
    pub week: u32,
    pub n_patients: usize,
    pub mean_scaled_score: Option<f64>,
    pub top_decile_share: Option<f64>,
    /// Signed mean attribution per feature, in margin space.
    pub mean_phi: Option<Vec<f64>>,
    pub mean_abs_phi: Option<Vec<f64>>,
    pub feature_means: Option<Vec<f64>>,
    /// `[feature][bin]`; bins under the cell minimum are null.
    pub histograms: Option<Vec<Vec<Option<u32>>>>,
    pub map_suppressed: bool,
}

impl RegionWeekAggregate {
    pub fn revealed(&self) -> bool {
        self.n_patients >= MIN_CELL
    }
}

/// One patient-week as seen by the aggregator.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientWeekRecord {
    pub scaled_score: f64,
    pub features: [f64; N_FEATURES],
    pub phi: [f64; N_FEATURES],
}

/// Running sums for one cell. Results depend on insertion order only through
/// floating-point summation, so callers feed rows in table order.
#[derive(Debug, Clone)]
pub struct Accumulator<'a> {
    threshold: DecileThreshold,
    edges: &'a HistogramEdges,
    n: usize,
    score_sum: f64,
    above: usize,
    feature_sum: [f64; N_FEATURES],
    phi_sum: [f64; N_FEATURES],
    abs_phi_sum: [f64; N_FEATURES],
    hist: [[u32; N_BINS]; N_FEATURES],
}

impl<'a> Accumulator<'a> {
    pub fn new(threshold: DecileThreshold, edges: &'a HistogramEdges) -> Self {
        Self {
            threshold,
            edges,
            n: 0,
            score_sum: 0.0,
            above: 0,
            feature_sum: [0.0; N_FEATURES],
            phi_sum: [0.0; N_FEATURES],
            abs_phi_sum: [0.0; N_FEATURES],
            hist: [[0; N_BINS]; N_FEATURES],
        }
    }

    pub fn add(&mut self, score: f64, x: &[f64], phi: &[f64]) {
        self.n += 1;
        self.score_sum += score;
        self.above += usize::from(self.threshold.contains(score));
        for f in 0..N_FEATURES {
            self.feature_sum[f] += x[f];
            self.phi_sum[f] += phi[f];
            self.abs_phi_sum[f] += phi[f].abs();
            self.hist[f][self.edges.bin(f, x[f])] += 1;
        }
    }

    pub fn add_row(&mut self, table: &PatientWeekTable, row: usize) {
        self.add(table.score[row], table.features_of(row), table.phi_of(row));
    }

    pub fn finish(&self, region_id: &str, level: Level, week: u32) -> RegionWeekAggregate {
        let n = self.n;
        let revealed = n >= MIN_CELL;
        let mean = |s: &[f64; N_FEATURES]| s.iter().map(|v| v / n as f64).collect::<Vec<_>>();
        RegionWeekAggregate {
            region_id: region_id.to_string(),
            level,
            week,
            n_patients: n,
            mean_scaled_score: revealed.then(|| self.score_sum / n as f64),
            top_decile_share: revealed.then(|| self.above as f64 / n as f64),
            mean_phi: revealed.then(|| mean(&self.phi_sum)),
            mean_abs_phi: revealed.then(|| mean(&self.abs_phi_sum)),
            feature_means: revealed.then(|| mean(&self.feature_sum)),
            histograms: revealed.then(|| {
                self.hist
                    .iter()
                    .map(|bins| bins.iter().map(|&c| (c as usize >= MIN_CELL).then_some(c)).collect())
                    .collect()
            }),
            map_suppressed: n < MIN_MAP_CELL,
        }
    }
}

/// Rollup of one region-week from its member records.
pub fn aggregate_region_week(
    region_id: &str,
    level: Level,
    week: u32,
    members: &[PatientWeekRecord],
    threshold: DecileThreshold,
    edges: &HistogramEdges,
) -> RegionWeekAggregate {
    let mut acc = Accumulator::new(threshold, edges);
    for m in members {
        acc.add(m.scaled_score, &m.features, &m.phi);
    }
    acc.finish(region_id, level, week)
}

/// Per-week statewide thresholds for weeks `0..n_weeks`.
pub fn weekly_thresholds(table: &PatientWeekTable, n_weeks: u32) -> Result<Vec<DecileThreshold>> {
    let mut by_week = vec![Vec::new(); n_weeks as usize];
    for (w, s) in table.week.iter().zip(&table.score) {
        if let Some(v) = by_week.get_mut(*w as usize) {
            v.push(*s);
        }
    }
    by_week
        .par_iter()
        .enumerate()
        .map(|(w, s)| statewide_decile(w as u32, s))
        .collect()
}

/// Prebuilt region-week aggregates for one level, region-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollup {
    pub level: Level,
    pub n_weeks: u32,
    pub cells: Vec<RegionWeekAggregate>,
}

impl Rollup {
    pub fn build(
        table: &PatientWeekTable,
        parts: &Partitions,
        thresholds: &[DecileThreshold],
        edges: &HistogramEdges,
    ) -> Self {
        let ids = table.region_ids(parts.level);
        let n_weeks = parts.n_weeks;
        let cells = (0..ids.len() * n_weeks as usize)
            .into_par_iter()
            .map(|cell| {
                let (r, w) = (cell / n_weeks as usize, (cell % n_weeks as usize) as u32);
                let mut acc = Accumulator::new(thresholds[w as usize], edges);
                for &row in parts.rows(r, w) {
                    acc.add_row(table, row as usize);
                }
                acc.finish(&ids[r], parts.level, w)
            })
            .collect();
        Self {
            level: parts.level,
            n_weeks,
            cells,
        }
    }

    pub fn get(&self, region: usize, week: u32) -> &RegionWeekAggregate {
        &self.cells[region * self.n_weeks as usize + week as usize]
    }

    /// All regions for one week, in region order.
    pub fn week(&self, week: u32) -> impl Iterator<Item = &RegionWeekAggregate> {
        self.cells.iter().skip(week as usize).step_by(self.n_weeks as usize)
    }
}

/// Recomputes statistics for a union of regions from member rows, one
/// aggregate per week. The union is labelled by its ids joined with `+`.
pub fn aggregate_selection(
    table: &PatientWeekTable,
    parts: &Partitions,
    regions: &[usize],
    weeks: Range<u32>,
    thresholds: &[DecileThreshold],
    edges: &HistogramEdges,
) -> Result<Vec<RegionWeekAggregate>> {
    if regions.is_empty() {
        return Err(Error::Aggregate("empty selection".into()));
    }
    if weeks.end > parts.n_weeks || weeks.start >= weeks.end {
        return Err(Error::Aggregate(format!(
            "week range {}..{} outside 0..{}",
            weeks.start, weeks.end, parts.n_weeks
        )));
    }
    let ids = table.region_ids(parts.level);
    let mut sorted = regions.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if let Some(&bad) = sorted.iter().find(|&&r| r >= ids.len()) {
        return Err(Error::UnknownRegion(format!("index {bad}")));
    }
    let label = sorted.iter().map(|&r| ids[r].as_str()).collect::<Vec<_>>().join("+");
    Ok(weeks
        .map(|w| {
            let mut acc = Accumulator::new(thresholds[w as usize], edges);
            for row in parts.union_rows(&sorted, w) {
                acc.add_row(table, row as usize);
            }
            acc.finish(&label, parts.level, w)
        })
        .collect())
}

/// Statewide aggregate per week over every row of the table.
pub fn statewide_series(
    table: &PatientWeekTable,
    n_weeks: u32,
    thresholds: &[DecileThreshold],
    edges: &HistogramEdges,
) -> Vec<RegionWeekAggregate> {
    let mut accs: Vec<Accumulator> = thresholds.iter().map(|t| Accumulator::new(*t, edges)).collect();
    for row in 0..table.len() {
        if let Some(acc) = accs.get_mut(table.week[row] as usize) {
            acc.add_row(table, row);
        }
    }
    accs.iter()
        .take(n_weeks as usize)
        .enumerate()
        .map(|(w, a)| a.finish(STATEWIDE_ID, Level::County, w as u32))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edges() -> HistogramEdges {
        HistogramEdges {
            lo: vec![0.0; N_FEATURES],
            hi: vec![20.0; N_FEATURES],
        }
    }

    fn rec(score: f64) -> PatientWeekRecord {
        PatientWeekRecord {
            scaled_score: score,
            features: [score; N_FEATURES],
            phi: [-score; N_FEATURES],
        }
    }

    fn thr(t: f64) -> DecileThreshold {
        DecileThreshold { week: 0, threshold: t }
    }

    #[test]
    fn two_patients_all_null() {
        let a = aggregate_region_week("r", Level::Zcta, 0, &[rec(1.0), rec(3.0)], thr(100.0), &edges());
        assert_eq!(a.n_patients, 2);
        assert!(a.mean_scaled_score.is_none() && a.top_decile_share.is_none());
        assert!(a.mean_phi.is_none() && a.mean_abs_phi.is_none());
        assert!(a.feature_means.is_none() && a.histograms.is_none());
        assert!(a.map_suppressed);
    }

    #[test]
    fn six_patients_revealed_but_off_map() {
        let m: Vec<_> = (1..=6).map(|s| rec(s as f64)).collect();
        let a = aggregate_region_week("r", Level::Zcta, 0, &m, thr(100.0), &edges());
        assert_eq!(a.mean_scaled_score, Some(3.5));
        assert_eq!(a.mean_phi.as_ref().unwrap()[0], -3.5);
        assert_eq!(a.mean_abs_phi.as_ref().unwrap()[0], 3.5);
        assert!(a.map_suppressed);
        // six values spread over single bins: every bin under five
        assert!(a.histograms.unwrap().iter().flatten().all(Option::is_none));
    }

    #[test]
    fn twenty_five_with_three_above() {
        let m: Vec<_> = (0..25).map(|i| rec(if i < 3 { 10.0 } else { 1.0 })).collect();
        let a = aggregate_region_week("r", Level::County, 4, &m, thr(5.0), &edges());
        assert_eq!(a.top_decile_share, Some(0.12));
        assert!(!a.map_suppressed);
        let h = a.histograms.unwrap();
        assert_eq!(h[0][1], Some(22));
        assert_eq!(h[0][10], None);
        assert_eq!(h[0].iter().flatten().sum::<u32>(), 22);
    }

    #[test]
    fn empty_region() {
        let a = aggregate_region_week("r", Level::Zcta, 0, &[], thr(0.0), &edges());
        assert_eq!(a.n_patients, 0);
        assert!(!a.revealed() && a.map_suppressed);
    }

    #[test]
    fn bins() {
        let e = edges();
        assert_eq!(e.bin(0, 0.0), 0);
        assert_eq!(e.bin(0, 0.999), 0);
        assert_eq!(e.bin(0, 1.0), 1);
        assert_eq!(e.bin(0, 20.0), N_BINS - 1);
        assert_eq!(e.bin(0, -5.0), 0);
        assert_eq!(e.bin(0, 99.0), N_BINS - 1);
        let flat = HistogramEdges {
            lo: vec![3.0; N_FEATURES],
            hi: vec![3.0; N_FEATURES],
        };
        assert_eq!(flat.bin(0, 3.0), 0);
        assert_eq!(e.edges(0).len(), N_BINS + 1);
    }

    #[test]
    fn metric_names() {
        for m in Metric::all() {
            assert_eq!(m.to_string().parse::<Metric>().unwrap(), m);
        }
        assert_eq!(
            "feature:cash_fill_proportion".parse::<Metric>().unwrap(),
            Metric::Feature(11)
        );
        assert!("feature:nope".parse::<Metric>().is_err());
        assert!("median".parse::<Metric>().is_err());
    }

    fn small_table() -> PatientWeekTable {
        let mut t = PatientWeekTable::with_regions(vec!["a".into(), "b".into()], vec!["c".into()]);
        let x = [1.0; N_FEATURES];
        for m in 0..7u32 {
            let z = u32::from(m >= 3);
            t.push(m, 0, z, 0, m as f64, &x, &x);
        }
        t
    }

    #[test]
    fn union_reveals_what_parts_hide() {
        let t = small_table();
        t.validate().unwrap();
        let p = Partitions::build(&t, Level::Zcta, 1);
        let th = [thr(100.0)];
        let e = edges();
        let r = Rollup::build(&t, &p, &th, &e);
        assert!(r.get(0, 0).mean_scaled_score.is_none());
        assert!(r.get(1, 0).mean_scaled_score.is_none());
        let u = aggregate_selection(&t, &p, &[1, 0], 0..1, &th, &e).unwrap();
        assert_eq!(u[0].n_patients, 7);
        assert_eq!(u[0].mean_scaled_score, Some(3.0));
        assert_eq!(u[0].region_id, "a+b");
        let single = aggregate_selection(&t, &p, &[1], 0..1, &th, &e).unwrap();
        assert_eq!(&single[0], r.get(1, 0));
    }

    #[test]
    fn selection_errors() {
        let t = small_table();
        let p = Partitions::build(&t, Level::Zcta, 1);
        let th = [thr(0.0)];
        assert!(aggregate_selection(&t, &p, &[], 0..1, &th, &edges()).is_err());
        assert!(aggregate_selection(&t, &p, &[2], 0..1, &th, &edges()).is_err());
        assert!(aggregate_selection(&t, &p, &[0], 0..2, &th, &edges()).is_err());
    }
}
