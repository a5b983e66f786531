//! Statewide top-decile threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum statewide active patients for a meaningful decile.
pub const MIN_DECILE_POPULATION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecileThreshold {
    pub week: u32,
    /// Nearest-rank 90th percentile of the week's scaled scores.
    pub threshold: f64,
}

impl DecileThreshold {
    /// Top-decile membership is strictly above the threshold, so ties at the
    /// threshold fall outside.
    pub fn contains(&self, scaled_score: f64) -> bool {
        scaled_score > self.threshold
    }
}

/// 1-based nearest rank of the 90th percentile: `ceil(0.9 n)`, in integers.
pub fn nearest_rank_90(n: usize) -> usize {
    (9 * n).div_ceil(10)
}

pub fn statewide_decile(week: u32, scores: &[f64]) -> Result<DecileThreshold> {
    if scores.len() < MIN_DECILE_POPULATION {
        return Err(Error::Aggregate(format!(
            "week {week}: {} active patients statewide, need at least {MIN_DECILE_POPULATION}",
            scores.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Aggregate(format!("week {week}: non-finite score {bad}")));
    }
    let mut v = scores.to_vec();
    let k = nearest_rank_90(v.len()) - 1;
    let (_, &mut threshold, _) = v.select_nth_unstable_by(k, f64::total_cmp);
    Ok(DecileThreshold { week, threshold })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn share(t: &DecileThreshold, scores: &[f64]) -> f64 {
        scores.iter().filter(|&&s| t.contains(s)).count() as f64 / scores.len() as f64
    }

    #[test]
    fn one_to_ten() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        let t = statewide_decile(0, &s).unwrap();
        assert_eq!(t.threshold, 9.0);
        assert_eq!(share(&t, &s), 0.1);
    }

    #[test]
    fn ties_fall_below() {
        let s = vec![7.5; 40];
        let t = statewide_decile(3, &s).unwrap();
        assert_eq!(share(&t, &s), 0.0);
    }

    #[test]
    fn ranks() {
        assert_eq!(nearest_rank_90(10), 9);
        assert_eq!(nearest_rank_90(11), 10);
        assert_eq!(nearest_rank_90(19), 18);
        assert_eq!(nearest_rank_90(20), 18);
        assert_eq!(nearest_rank_90(10_000), 9_000);
    }

    #[test]
    fn order_does_not_matter() {
        let s = [5.0, 1.0, 9.0, 3.0, 7.0, 2.0, 10.0, 4.0, 8.0, 6.0, 11.0];
        assert_eq!(statewide_decile(0, &s).unwrap().threshold, 10.0);
    }

    #[test]
    fn too_few_or_empty() {
        assert!(statewide_decile(0, &[]).is_err());
        assert!(statewide_decile(0, &[1.0; 9]).is_err());
        assert!(statewide_decile(0, &[1.0, f64::NAN, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());
    }
}
