//! Minimal histogram gradient boosting with logistic loss.
//!
//! Each round fits one depth-limited regression tree to the Newton direction
//! of the log-loss. Candidate thresholds come from per-feature quantile bins.
//! Node covers are hessian sums: leaves sum their rows directly and internal
//! nodes add their children, so cover additivity holds exactly.

use rayon::prelude::*;

use super::{Tree, TreeEnsemble};
use crate::error::{Error, Result};
use crate::features::N_FEATURES;
use crate::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum hessian mass in each child of a split.
    pub min_cover: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
    /// Maximum histogram bins per feature (at most 256).
    pub max_bins: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 4,
            learning_rate: 0.1,
            min_cover: 1.0,
            lambda: 1.0,
            max_bins: 128,
        }
    }
}

/// Row-major training matrix with binary labels.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a> {
    pub features: &'a [f64],
    pub n_features: usize,
    pub labels: &'a [bool],
}

impl<'a> Dataset<'a> {
    pub fn new(features: &'a [f64], n_features: usize, labels: &'a [bool]) -> Result<Self> {
        if n_features == 0 || n_features > N_FEATURES {
            return Err(Error::Training(format!("feature width {n_features} outside 1..={N_FEATURES}")));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::Training("feature matrix and labels disagree in length".into()));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training("non-finite feature value".into()));
        }
        Ok(Self {
            features,
            n_features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }
}

pub fn train(data: &Dataset<'_>, params: &TrainParams) -> Result<TreeEnsemble> {
    train_with_history(data, params).map(|(m, _)| m)
}

/// Trains and also returns the training log-loss after each round (index 0 is
/// the loss of the base margin alone).
pub fn train_with_history(data: &Dataset<'_>, params: &TrainParams) -> Result<(TreeEnsemble, Vec<f64>)> {
    if params.learning_rate.is_nan() || params.learning_rate <= 0.0 || params.lambda < 0.0 || params.min_cover < 0.0 {
        return Err(Error::Training("invalid boosting parameters".into()));
    }
    if !(2..=256).contains(&params.max_bins) {
        return Err(Error::Training("max_bins must be in 2..=256".into()));
    }
    let n = data.len();
    let positives = data.labels.iter().filter(|&&y| y).count();
    if positives == 0 || positives == n {
        return Err(Error::Training("labels contain a single class".into()));
    }

    let prior = positives as f64 / n as f64;
    let base_margin = (prior / (1.0 - prior)).ln();
    let binned = BinnedMatrix::new(data, params.max_bins);
    let mut margins = vec![base_margin; n];
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let mut history = vec![log_loss_margins(&margins, data.labels)];
    let mut trees = Vec::with_capacity(params.n_trees);

    for _ in 0..params.n_trees {
        for i in 0..n {
            let p = sigmoid(margins[i]);
            grad[i] = p - f64::from(u8::from(data.labels[i]));
            hess[i] = (p * (1.0 - p)).max(1e-16);
        }
        let grower = Grower {
            binned: &binned,
            grad: &grad,
            hess: &hess,
            params,
        };
        let rows: Vec<u32> = (0..n as u32).collect();
        let tree = grower.grow(rows, 0);
        for (i, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(data.row(i))?;
        }
        history.push(log_loss_margins(&margins, data.labels));
        trees.push(tree);
    }
    Ok((TreeEnsemble::new(trees, base_margin)?, history))
}

fn log_loss_margins(margins: &[f64], labels: &[bool]) -> f64 {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y*m, computed stably
            let softplus = if m > 0.0 { m + (-m).exp().ln_1p() } else { m.exp().ln_1p() };
            softplus - if y { m } else { 0.0 }
        })
        .sum::<f64>()
        / margins.len() as f64
}

/// Column-major bin codes plus the cut values they refer to.
struct BinnedMatrix {
    n_rows: usize,
    n_features: usize,
    /// `cuts[f][b]` separates bin `b` (values below) from bin `b + 1`.
    cuts: Vec<Vec<f64>>,
    codes: Vec<u8>,
}

impl BinnedMatrix {
    fn new(data: &Dataset<'_>, max_bins: usize) -> Self {
        let n = data.len();
        let cuts: Vec<Vec<f64>> = (0..data.n_features)
            .into_par_iter()
            .map(|f| {
                let mut col: Vec<f64> = (0..n).map(|i| data.row(i)[f]).collect();
                col.sort_by(f64::total_cmp);
                cut_points(&col, max_bins)
            })
            .collect();
        let codes: Vec<u8> = (0..data.n_features)
            .into_par_iter()
            .flat_map_iter(|f| {
                let c = &cuts[f];
                (0..n).map(move |i| c.partition_point(|&cut| cut <= data.row(i)[f]) as u8)
            })
            .collect();
        Self {
            n_rows: n,
            n_features: data.n_features,
            cuts,
            codes,
        }
    }

    fn code(&self, feature: usize, row: u32) -> usize {
        self.codes[feature * self.n_rows + row as usize] as usize
    }
}

/// Thresholds between distinct values; a value `x` belongs to bin
/// `#{cuts <= x}`, so `x < cuts[b]` iff its bin is at most `b`.
fn cut_points(sorted: &[f64], max_bins: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = sorted.to_vec();
    distinct.dedup();
    let boundaries: Vec<(f64, f64)> = if distinct.len() <= max_bins {
        distinct.windows(2).map(|w| (w[0], w[1])).collect()
    } else {
        let n = sorted.len();
        let mut out: Vec<(f64, f64)> = Vec::with_capacity(max_bins);
        for k in 1..max_bins {
            let upper = sorted[k * n / max_bins];
            let pos = distinct.partition_point(|&v| v < upper);
            if pos == 0 {
                continue;
            }
            let pair = (distinct[pos - 1], upper);
            if out.last() != Some(&pair) {
                out.push(pair);
            }
        }
        out
    };
    boundaries
        .into_iter()
        .map(|(lo, hi)| {
            let mid = lo + (hi - lo) / 2.0;
            if mid > lo { mid } else { hi }
        })
        .collect()
}

#[derive(Clone)]
struct Histogram {
    grad: Vec<f64>,
    hess: Vec<f64>,
}

struct Candidate {
    gain: f64,
    feature: usize,
    bin: usize,
}

struct Grower<'a> {
    binned: &'a BinnedMatrix,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TrainParams,
}

impl Grower<'_> {
    fn histograms(&self, rows: &[u32]) -> Vec<Histogram> {
        (0..self.binned.n_features)
            .into_par_iter()
            .map(|f| {
                let nb = self.binned.cuts[f].len() + 1;
                let mut h = Histogram {
                    grad: vec![0.0; nb],
                    hess: vec![0.0; nb],
                };
                for &r in rows {
                    let b = self.binned.code(f, r);
                    h.grad[b] += self.grad[r as usize];
                    h.hess[b] += self.hess[r as usize];
                }
                h
            })
            .collect()
    }

    fn best_split(&self, hists: &[Histogram], g: f64, h: f64) -> Option<Candidate> {
        let lambda = self.params.lambda;
        let parent = g * g / (h + lambda);
        let mut best: Option<Candidate> = None;
        for (f, hist) in hists.iter().enumerate() {
            let (mut gl, mut hl) = (0.0, 0.0);
            for b in 0..hist.grad.len() - 1 {
                gl += hist.grad[b];
                hl += hist.hess[b];
                let (gr, hr) = (g - gl, h - hl);
                if hl <= 0.0 || hr <= 0.0 || hl < self.params.min_cover || hr < self.params.min_cover {
                    continue;
                }
                let gain = gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - parent;
                if gain > 1e-12 && best.as_ref().map_or(true, |c| gain > c.gain) {
                    best = Some(Candidate { gain, feature: f, bin: b });
                }
            }
        }
        best
    }

    fn leaf(&self, rows: &[u32]) -> Tree {
        let (g, h) = self.sums(rows);
        let value = -self.params.learning_rate * g / (h + self.params.lambda);
        Tree::leaf(value, h)
    }

    fn sums(&self, rows: &[u32]) -> (f64, f64) {
        rows.iter().fold((0.0, 0.0), |(g, h), &r| {
            (g + self.grad[r as usize], h + self.hess[r as usize])
        })
    }

    fn grow(&self, rows: Vec<u32>, depth: usize) -> Tree {
        if depth >= self.params.max_depth || rows.len() < 2 {
            return self.leaf(&rows);
        }
        let (g, h) = self.sums(&rows);
        let hists = self.histograms(&rows);
        let Some(split) = self.best_split(&hists, g, h) else {
            return self.leaf(&rows);
        };
        let (left, right): (Vec<u32>, Vec<u32>) = rows
            .iter()
            .partition(|&&r| self.binned.code(split.feature, r) <= split.bin);
        drop(rows);
        let threshold = self.binned.cuts[split.feature][split.bin];
        let left = self.grow(left, depth + 1);
        let right = self.grow(right, depth + 1);
        Tree::split(split.feature, threshold, left, right)
    }
}
