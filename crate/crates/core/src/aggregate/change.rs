//! Week-over-week changes: ranked feature shifts, the existing / incoming /
//! outgoing split of a mean's change, and its one-sentence caption.

use serde::{Deserialize, Serialize};

use super::RegionWeekAggregate;
use crate::error::{Error, Result};
use crate::features::REGISTRY;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureChange {
    pub feature: String,
    pub index: usize,
    pub previous_mean: f64,
    pub current_mean: f64,
    /// `None` when the previous mean is zero.
    pub pct_change: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopChanges {
    pub week: u32,
    pub items: Vec<FeatureChange>,
    /// Set when the ranking is withheld.
    pub reason: Option<String>,
}

/// Features ranked by absolute percent change of their means between
/// `prev` and `cur`. Ties keep registry order; undefined changes go last.
pub fn top_changes(prev: &RegionWeekAggregate, cur: &RegionWeekAggregate, k: usize) -> Result<TopChanges> {
    if cur.week == 0 || prev.week + 1 != cur.week {
        return Err(Error::Aggregate(format!(
            "changes need consecutive weeks, got {} and {}",
            prev.week, cur.week
        )));
    }
    let (Some(a), Some(b)) = (&prev.feature_means, &cur.feature_means) else {
        return Ok(TopChanges {
            week: cur.week,
            items: Vec::new(),
            reason: Some("suppressed: fewer than 5 patients in one of the two weeks".into()),
        });
    };
    let mut items: Vec<FeatureChange> = REGISTRY
        .iter()
        .map(|def| {
            let (p, c) = (a[def.index], b[def.index]);
            FeatureChange {
                feature: def.name.to_string(),
                index: def.index,
                previous_mean: p,
                current_mean: c,
                pct_change: (p != 0.0).then(|| (c - p) / p.abs()),
            }
        })
        .collect();
    items.sort_by(|x, y| match (x.pct_change, y.pct_change) {
        (Some(px), Some(py)) => py.abs().total_cmp(&px.abs()).then(x.index.cmp(&y.index)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => x.index.cmp(&y.index),
    });
    items.truncate(k);
    Ok(TopChanges {
        week: cur.week,
        items,
        reason: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupSizes {
    /// Active in both weeks.
    pub existing: usize,
    /// Active only in the later week.
    pub incoming: usize,
    /// Active only in the earlier week.
    pub outgoing: usize,
}

impl GroupSizes {
    pub fn smallest_nonempty(&self) -> Option<usize> {
        [self.existing, self.incoming, self.outgoing].into_iter().filter(|&n| n > 0).min()
    }
}

/// Split of `mean_t − mean_{t−1}` into contributions of continuing, new and
/// departed patients. The three deltas sum to `delta_total`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeDecomposition {
    pub feature: String,
    pub week: u32,
    pub pct_change: Option<f64>,
    pub delta_total: f64,
    pub delta_existing: f64,
    pub delta_incoming: f64,
    pub delta_outgoing: f64,
    pub groups: GroupSizes,
}

/// `prev` and `cur` are `(member, value)` pairs sorted by member, for weeks
/// `week − 1` and `week`.
pub fn decompose_values(feature: &str, week: u32, prev: &[(u32, f64)], cur: &[(u32, f64)]) -> Result<ChangeDecomposition> {
    if week == 0 {
        return Err(Error::Aggregate("no previous week for week 0".into()));
    }
    if prev.is_empty() || cur.is_empty() {
        return Err(Error::Aggregate(format!(
            "week {week}: decomposition needs patients in both weeks"
        )));
    }
    for side in [prev, cur] {
        if side.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Aggregate("members not strictly ascending".into()));
        }
    }

    let (mut s_prev, mut s_cur, mut i_sum, mut o_sum) = (0.0, 0.0, 0.0, 0.0);
    let mut g = GroupSizes {
        existing: 0,
        incoming: 0,
        outgoing: 0,
    };
    let (mut i, mut j) = (0, 0);
    while i < prev.len() || j < cur.len() {
        match (prev.get(i), cur.get(j)) {
            (Some(p), Some(c)) if p.0 == c.0 => {
                s_prev += p.1;
                s_cur += c.1;
                g.existing += 1;
                i += 1;
                j += 1;
            }
            (Some(p), Some(c)) if p.0 < c.0 => {
                o_sum += p.1;
                g.outgoing += 1;
                i += 1;
            }
            (Some(p), None) => {
                o_sum += p.1;
                g.outgoing += 1;
                i += 1;
            }
            (_, Some(c)) => {
                i_sum += c.1;
                g.incoming += 1;
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }

    let n_t = (g.existing + g.incoming) as f64;
    let n_p = (g.existing + g.outgoing) as f64;
    let mean_t = (s_cur + i_sum) / n_t;
    let mean_p = (s_prev + o_sum) / n_p;
    let m = |sum: f64, n: usize| sum / n as f64;
    let s = g.existing as f64;

    let delta_existing = if g.existing > 0 {
        (s / n_t) * (m(s_cur, g.existing) - m(s_prev, g.existing))
    } else {
        0.0
    };
    let delta_incoming = if g.incoming > 0 {
        (g.incoming as f64 / n_t) * (m(i_sum, g.incoming) - mean_p)
    } else {
        0.0
    };
    let delta_outgoing = if g.existing > 0 && g.outgoing > 0 {
        (s / n_t) * (g.outgoing as f64 / n_p) * (m(s_prev, g.existing) - m(o_sum, g.outgoing))
    } else {
        0.0
    };
    Ok(ChangeDecomposition {
        feature: feature.to_string(),
        week,
        pct_change: (mean_p != 0.0).then(|| (mean_t - mean_p) / mean_p.abs()),
        delta_total: mean_t - mean_p,
        delta_existing,
        delta_incoming,
        delta_outgoing,
        groups: g,
    })
}

/// Rounds to two significant figures.
pub fn fmt_sig2(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { x.to_string() };
    }
    let mut p = x.abs().log10().floor() as i32;
    let scale = 10f64.powi(p - 1);
    let r = (x / scale).round() * scale;
    if r.abs() >= 10f64.powi(p + 1) {
        p += 1;
    }
    let decimals = (1 - p).max(0) as usize;
    format!("{r:.decimals$}")
}

fn signed(x: f64) -> String {
    let s = fmt_sig2(x);
    if x > 0.0 {
        format!("+{s}")
    } else {
        s
    }
}

const NEGLIGIBLE: f64 = 1e-12;

/// Deterministic caption naming the largest of the three contributions.
pub fn render_trend_text(d: &ChangeDecomposition) -> String {
    let parts = [
        (d.delta_existing, "changes among patients active in both weeks"),
        (d.delta_incoming, "patients with new prescriptions"),
        (d.delta_outgoing, "patients who stopped filling prescriptions"),
    ];
    let span = format!("from week {} to week {}", d.week.saturating_sub(1), d.week);
    let (dominant, phrase) = parts
        .iter()
        .copied()
        .reduce(|best, c| if c.0.abs() > best.0.abs() { c } else { best })
        .expect("three parts");
    if dominant.abs() <= NEGLIGIBLE {
        return format!("{}: no meaningful change {span}.", d.feature);
    }
    if d.delta_total.abs() <= NEGLIGIBLE {
        return format!(
            "{} was unchanged overall {span}; the largest shift came from {phrase} ({}), offset by the other groups.",
            d.feature,
            signed(dominant)
        );
    }
    let direction = if d.delta_total > 0.0 { "rose" } else { "fell" };
    format!(
        "{} {direction} by {} {span}, driven mainly by {phrase} ({}).",
        d.feature,
        fmt_sig2(d.delta_total.abs()),
        signed(dominant)
    )
}
