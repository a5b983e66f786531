//! Response bodies. Counts and statistics from fewer than
//! [`MIN_CELL`] patients are serialized as `null`.

use regionrisk::aggregate::{ChangeDecomposition, Metric, RegionWeekAggregate, TopChanges, MIN_CELL};
use regionrisk::features::{feature_names, registry_json, N_FEATURES};
use regionrisk::geography::Level;
use regionrisk::store::{AggregateStore, LayerEntry, WeekInfo};
use serde::{Deserialize, Serialize};

pub const TOP_IMPORTANCE: usize = 10;
pub const TOP_CHANGES: usize = 10;

fn count(n: usize) -> Option<usize> {
    (n >= MIN_CELL).then_some(n)
}

#[derive(Debug, Serialize)]
pub struct ManifestBody {
    pub format_version: u32,
    pub registry_version: String,
    pub seed: u64,
    pub weeks: Vec<WeekInfo>,
    pub levels: Vec<Level>,
    pub metrics: Vec<String>,
    pub registry: serde_json::Value,
}

impl ManifestBody {
    pub fn new(store: &AggregateStore) -> Self {
        let m = &store.manifest;
        Self {
            format_version: m.format_version,
            registry_version: m.registry_version.clone(),
            seed: m.seed,
            weeks: m.weeks.clone(),
            levels: m.levels.clone(),
            metrics: m.metrics.clone(),
            registry: registry_json(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct LayerBody {
    pub level: Level,
    pub metric: String,
    pub week: u32,
    pub regions: Vec<LayerEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeekRange {
    pub start: u32,
    /// Exclusive.
    pub end: u32,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionRequest {
    pub level: String,
    pub region_ids: Vec<String>,
    pub metric: String,
    pub week_range: WeekRange,
    /// Defaults to the last week of the range.
    #[serde(default)]
    pub focus_week: Option<u32>,
}

#[derive(Debug, Serialize)]
pub struct SeriesPoint {
    pub week: u32,
    pub n_patients: Option<usize>,
    pub value: Option<f64>,
    pub suppressed: bool,
}

impl SeriesPoint {
    pub fn new(agg: &RegionWeekAggregate, metric: Metric) -> Self {
        Self {
            week: agg.week,
            n_patients: count(agg.n_patients),
            value: metric.value(agg),
            suppressed: !agg.revealed(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Importance {
    pub feature: String,
    pub mean_phi: f64,
    pub mean_abs_phi: f64,
}

/// Features with the largest |mean_phi|, ties in registry order.
pub fn top_importance(agg: &RegionWeekAggregate, k: usize) -> Option<Vec<Importance>> {
    let (phi, abs) = (agg.mean_phi.as_ref()?, agg.mean_abs_phi.as_ref()?);
    let names: Vec<&str> = feature_names().collect();
    let mut order: Vec<usize> = (0..N_FEATURES).collect();
    order.sort_by(|&a, &b| phi[b].abs().total_cmp(&phi[a].abs()).then(a.cmp(&b)));
    Some(
        order
            .into_iter()
            .take(k)
            .map(|f| Importance {
                feature: names[f].to_string(),
                mean_phi: phi[f],
                mean_abs_phi: abs[f],
            })
            .collect(),
    )
}

#[derive(Debug, Serialize)]
pub struct Histogram {
    pub feature: String,
    /// `N_BINS + 1` bin edges, fixed across weeks.
    pub edges: Vec<f64>,
    pub counts: Vec<Option<u32>>,
}

pub fn histograms(store: &AggregateStore, agg: &RegionWeekAggregate) -> Option<Vec<Histogram>> {
    let h = agg.histograms.as_ref()?;
    Some(
        feature_names()
            .zip(h)
            .enumerate()
            .map(|(f, (name, counts))| Histogram {
                feature: name.to_string(),
                edges: store.edges.edges(f),
                counts: counts.clone(),
            })
            .collect(),
    )
}

#[derive(Debug, Serialize)]
pub struct GroupCounts {
    pub existing: Option<usize>,
    pub incoming: Option<usize>,
    pub outgoing: Option<usize>,
}

/// A decomposition with small-group components withheld.
#[derive(Debug, Serialize)]
pub struct DecompositionBody {
    pub metric: String,
    pub week: u32,
    pub pct_change: Option<f64>,
    pub delta_total: f64,
    pub delta_existing: Option<f64>,
    pub delta_incoming: Option<f64>,
    pub delta_outgoing: Option<f64>,
    pub groups: GroupCounts,
    pub components_suppressed: bool,
}

impl DecompositionBody {
    /// Components are shown only when every non-empty group has at least
    /// [`MIN_CELL`] patients.
    pub fn new(d: &ChangeDecomposition) -> Self {
        let show = !matches!(d.groups.smallest_nonempty(), Some(n) if n < MIN_CELL);
        let part = |v: f64| show.then_some(v);
        Self {
            metric: d.feature.clone(),
            week: d.week,
            pct_change: d.pct_change,
            delta_total: d.delta_total,
            delta_existing: part(d.delta_existing),
            delta_incoming: part(d.delta_incoming),
            delta_outgoing: part(d.delta_outgoing),
            groups: GroupCounts {
                existing: count(d.groups.existing),
                incoming: count(d.groups.incoming),
                outgoing: count(d.groups.outgoing),
            },
            components_suppressed: !show,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Detail {
    pub week: u32,
    pub n_patients: Option<usize>,
    pub importance: Option<Vec<Importance>>,
    pub histograms: Option<Vec<Histogram>>,
    pub top_changes: Option<TopChanges>,
    pub decomposition: Option<DecompositionBody>,
    pub trend_text: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct SelectionBody {
    pub level: Level,
    pub region_ids: Vec<String>,
    pub metric: String,
    pub week_range: WeekRange,
    pub focus_week: u32,
    pub series: Vec<SeriesPoint>,
    pub statewide: Vec<SeriesPoint>,
    pub detail: Detail,
}
