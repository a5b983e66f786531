//! Columnar patient-week table: the input to every rollup.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::features::{FeatureTable, N_FEATURES};
use crate::geography::{GeographyIndex, Level};
use crate::scoring::{RiskScore, ShapRow};

/// One patient-week in columnar form. Patients are identified only by a
/// pseudonymous member number; rows are ordered by member then week.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PatientWeekTable {
    pub zcta_ids: Vec<String>,
    pub county_ids: Vec<String>,
    pub member: Vec<u32>,
    pub week: Vec<u32>,
    pub zcta: Vec<u32>,
    pub county: Vec<u32>,
    pub score: Vec<f64>,
    /// Row-major, `N_FEATURES` per row.
    pub features: Vec<f64>,
    /// Row-major, `N_FEATURES` per row.
    pub phi: Vec<f64>,
}

impl PatientWeekTable {
    pub fn with_regions(zcta_ids: Vec<String>, county_ids: Vec<String>) -> Self {
        Self {
            zcta_ids,
            county_ids,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.member.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member.is_empty()
    }

    pub fn reserve(&mut self, rows: usize) {
        self.member.reserve(rows);
        self.week.reserve(rows);
        self.zcta.reserve(rows);
        self.county.reserve(rows);
        self.score.reserve(rows);
        self.features.reserve(rows * N_FEATURES);
        self.phi.reserve(rows * N_FEATURES);
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(&mut self, member: u32, week: u32, zcta: u32, county: u32, score: f64, x: &[f64], phi: &[f64]) {
        debug_assert_eq!(x.len(), N_FEATURES);
        debug_assert_eq!(phi.len(), N_FEATURES);
        self.member.push(member);
        self.week.push(week);
        self.zcta.push(zcta);
        self.county.push(county);
        self.score.push(score);
        self.features.extend_from_slice(x);
        self.phi.extend_from_slice(phi);
    }

    pub fn features_of(&self, row: usize) -> &[f64] {
        &self.features[row * N_FEATURES..(row + 1) * N_FEATURES]
    }

    pub fn phi_of(&self, row: usize) -> &[f64] {
        &self.phi[row * N_FEATURES..(row + 1) * N_FEATURES]
    }

    pub fn region_ids(&self, level: Level) -> &[String] {
        match level {
            Level::Zcta => &self.zcta_ids,
            Level::County => &self.county_ids,
        }
    }

    pub fn region_of(&self, level: Level, row: usize) -> u32 {
        match level {
            Level::Zcta => self.zcta[row],
            Level::County => self.county[row],
        }
    }

    /// Number of weeks covered: one past the largest week index.
    pub fn n_weeks(&self) -> u32 {
        self.week.iter().max().map_or(0, |w| w + 1)
    }

    /// Checks column lengths, region indexes and row order.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if [self.week.len(), self.zcta.len(), self.county.len(), self.score.len()]
            .iter()
            .any(|&l| l != n)
            || self.features.len() != n * N_FEATURES
            || self.phi.len() != n * N_FEATURES
        {
            return Err(Error::Aggregate("patient-week columns differ in length".into()));
        }
        for i in 0..n {
            if self.zcta[i] as usize >= self.zcta_ids.len() || self.county[i] as usize >= self.county_ids.len() {
                return Err(Error::Aggregate(format!("row {i}: region index out of range")));
            }
            if i > 0 && (self.member[i - 1], self.week[i - 1]) >= (self.member[i], self.week[i]) {
                return Err(Error::Aggregate(format!("row {i}: rows not ordered by member then week")));
            }
            if !self.score[i].is_finite() {
                return Err(Error::Aggregate(format!("row {i}: non-finite score")));
            }
        }
        Ok(())
    }

    /// Joins features, scores and attributions (all in feature-table order)
    /// and drops patient identifiers.
    pub fn from_scored(
        geo: &GeographyIndex,
        features: &FeatureTable,
        scores: &[RiskScore],
        shap: &[ShapRow],
    ) -> Result<Self> {
        if scores.len() != features.rows.len() || shap.len() != features.rows.len() {
            return Err(Error::Aggregate(format!(
                "{} feature rows, {} scores, {} attribution rows",
                features.rows.len(),
                scores.len(),
                shap.len()
            )));
        }
        let ids = |level| -> Vec<String> { geo.regions(level).iter().map(|r| r.id.clone()).collect() };
        let mut table = Self::with_regions(ids(Level::Zcta), ids(Level::County));
        let index = |list: &[String]| -> HashMap<String, u32> {
            list.iter().enumerate().map(|(i, id)| (id.clone(), i as u32)).collect()
        };
        let zi = index(&table.zcta_ids);
        let ci = index(&table.county_ids);
        table.reserve(features.rows.len());

        let mut member = 0u32;
        let mut last: Option<&str> = None;
        for ((row, s), phi) in features.rows.iter().zip(scores).zip(shap) {
            if s.patient_id != row.patient_id || s.week != row.week || phi.patient_id != row.patient_id || phi.week != row.week {
                return Err(Error::Aggregate(format!(
                    "score row ({}, {}) does not match feature row ({}, {})",
                    s.patient_id, s.week, row.patient_id, row.week
                )));
            }
            match last {
                Some(p) if p == row.patient_id => {}
                Some(p) if p > row.patient_id.as_str() => {
                    return Err(Error::Aggregate("feature rows not sorted by patient".into()));
                }
                Some(_) => member += 1,
                None => {}
            }
            last = Some(&row.patient_id);
            let z = *zi.get(&row.zcta).ok_or_else(|| Error::UnknownRegion(row.zcta.clone()))?;
            let c = *ci.get(&row.county).ok_or_else(|| Error::UnknownRegion(row.county.clone()))?;
            table.push(member, row.week, z, c, s.scaled, &row.x, &phi.shap.phi);
        }
        table.validate()?;
        Ok(table)
    }
}

/// Row indexes grouped by (region, week) for one level.
#[derive(Debug, Clone)]
pub struct Partitions {
    pub level: Level,
    pub n_weeks: u32,
    cells: Vec<Vec<u32>>,
}

impl Partitions {
    /// Row lists are in ascending row order.
    pub fn build(table: &PatientWeekTable, level: Level, n_weeks: u32) -> Self {
        let n_regions = table.region_ids(level).len();
        let mut cells = vec![Vec::new(); n_regions * n_weeks as usize];
        for row in 0..table.len() {
            let w = table.week[row];
            if w < n_weeks {
                let r = table.region_of(level, row) as usize;
                cells[r * n_weeks as usize + w as usize].push(row as u32);
            }
        }
        Self { level, n_weeks, cells }
    }

    pub fn n_regions(&self) -> usize {
        self.cells.len() / self.n_weeks.max(1) as usize
    }

    pub fn rows(&self, region: usize, week: u32) -> &[u32] {
        &self.cells[region * self.n_weeks as usize + week as usize]
    }

    /// Rows of several regions for one week, merged into ascending order.
    pub fn union_rows(&self, regions: &[usize], week: u32) -> Vec<u32> {
        let mut out: Vec<u32> = regions.iter().flat_map(|&r| self.rows(r, week).iter().copied()).collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}
