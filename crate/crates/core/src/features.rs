//! Weekly 20-variable feature vectors computed from the fill stream.
//!
//! The registry below is a stand-in: only the categories of the production
//! model's variables are known (fill counts, dosage, days' supply,
//! overlapping medications, payment, prescribers and pharmacies, region-level
//! covariates), not the variables themselves.
//!
//! Weeks are consecutive 7-day bins from day 0, so week `w` ends on day
//! `7w + 6`. Every feature looks back over the 180 days ending on that day.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::cohort::{
    CohortTables, DrugClass, Gender, OutcomeRecord, Patient, Payment, PrescriptionEvent,
    MAX_DAYS_SUPPLY,
};
use crate::error::{Error, Result};

pub const N_FEATURES: usize = 20;
pub const LOOKBACK_DAYS: i32 = 180;
pub const REGISTRY_VERSION: &str = "canonical-20/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FeatureDef {
    pub index: usize,
    pub name: &'static str,
    pub units: &'static str,
    pub description: &'static str,
    pub transform: &'static str,
}

const fn def(
    index: usize,
    name: &'static str,
    units: &'static str,
    description: &'static str,
    transform: &'static str,
) -> FeatureDef {
    FeatureDef {
        index,
        name,
        units,
        description,
        transform,
    }
}

pub static REGISTRY: [FeatureDef; N_FEATURES] = [
    def(0, "opioid_fill_count", "fills", "Opioid fills in the lookback window", "count"),
    def(1, "benzo_fill_count", "fills", "Benzodiazepine fills in the lookback window", "count"),
    def(2, "distinct_opioid_prescribers", "prescribers", "Distinct prescribers of opioid fills", "distinct"),
    def(3, "distinct_opioid_pharmacies", "pharmacies", "Distinct pharmacies dispensing opioid fills", "distinct"),
    def(4, "mean_daily_mme", "MME/day", "Mean daily MME over days covered by at least one opioid", "day_expansion_mean"),
    def(5, "max_daily_mme", "MME/day", "Largest daily MME on any day in the window", "day_expansion_max"),
    def(6, "total_mme", "MME", "Total MME dispensed for days inside the window", "day_expansion_sum"),
    def(7, "total_days_supply", "days", "Summed days' supply of opioid fills", "sum"),
    def(8, "long_acting_fill_count", "fills", "Long-acting opioid fills", "count"),
    def(9, "opioid_benzo_overlap_days", "days", "Days covered by both an opioid and a benzodiazepine", "interval_overlap"),
    def(10, "opioid_opioid_overlap_days", "days", "Days covered by two or more opioid fills", "interval_overlap"),
    def(11, "cash_fill_proportion", "proportion", "Share of opioid fills paid in cash", "proportion"),
    def(12, "days_since_last_fill", "days", "Days from the most recent fill to the week's end", "recency"),
    def(13, "mme_monthly_change", "MME", "MME in the last 30 days minus MME in the 30 days before", "difference"),
    def(14, "fills_last_30_days", "fills", "Fills of any class in the last 30 days", "count"),
    def(15, "age", "years", "Patient age", "identity"),
    def(16, "gender_male", "indicator", "1 for male, 0 for female", "indicator"),
    def(17, "county_mean_daily_mme", "MME/day", "County average of mean_daily_mme over active patients", "county_mean"),
    def(18, "county_fills_per_active_patient", "fills", "County fills of any class per active patient", "county_mean"),
    def(19, "county_cash_proportion", "proportion", "County share of opioid fills paid in cash", "county_proportion"),
];

/// Index of a registry feature by name.
pub fn feature_index(name: &str) -> Option<usize> {
    REGISTRY.iter().position(|f| f.name == name)
}

pub fn feature_names() -> impl Iterator<Item = &'static str> {
    REGISTRY.iter().map(|f| f.name)
}

/// Registry metadata as served to the dashboard.
pub fn registry_json() -> serde_json::Value {
    serde_json::json!({
        "registry_version": REGISTRY_VERSION,
        "stand_in": true,
        "note": "Documented stand-in feature list; the production variables are not published.",
        "features": REGISTRY,
    })
}

pub fn week_end_day(week: u32) -> i32 {
    week as i32 * 7 + 6
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientWeekFeatures {
    pub patient_id: String,
    pub week: u32,
    pub active: bool,
    pub x: [f64; N_FEATURES],
}

/// County-week covariates shared by every active patient of a county.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CountyCovariates {
    pub mean_daily_mme: f64,
    pub fills_per_active_patient: f64,
    pub cash_proportion: f64,
}

/// True iff the patient filled anything in the 180 days ending on the week's
/// last day. `events` are the patient's fills sorted by date.
pub fn is_active(events: &[PrescriptionEvent], week: u32) -> bool {
    let end = week_end_day(week);
    let start = end - LOOKBACK_DAYS + 1;
    let first = events.partition_point(|e| e.fill_date < start);
    events.get(first).is_some_and(|e| e.fill_date <= end)
}

/// Patient-level part of the vector plus the counts needed for county rollups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatientLevel {
    /// Features 0..17; county slots are left at zero.
    pub x: [f64; N_FEATURES],
    pub all_fills: u32,
    pub opioid_fills: u32,
    pub cash_opioid_fills: u32,
}

#[derive(Default)]
struct Sweep {
    covered_days: i64,
    total_mme: f64,
    max_mme: f64,
    opioid_benzo_days: i64,
    opioid_opioid_days: i64,
    recent_mme: f64,
    prior_mme: f64,
}

fn overlap_len(a: i32, b: i32, lo: i32, hi: i32) -> i64 {
    // [a, b) ∩ [lo, hi)
    (b.min(hi) - a.max(lo)).max(0) as i64
}

/// Boundary sweep over coverage intervals clipped to `[start, end]`.
fn sweep(events: &[&PrescriptionEvent], start: i32, end: i32) -> Sweep {
    // (day, mme delta, opioid delta, benzo delta)
    let mut bounds: Vec<(i32, f64, i32, i32)> = Vec::with_capacity(events.len() * 2);
    for e in events {
        let (dm, dopi, dbenz) = match e.drug_class {
            DrugClass::Opioid => (e.mme_per_day, 1, 0),
            DrugClass::Benzodiazepine => (0.0, 0, 1),
            DrugClass::Other => continue,
        };
        let lo = e.fill_date.max(start);
        let hi = e.last_covered_day().min(end) + 1;
        if lo < hi {
            bounds.push((lo, dm, dopi, dbenz));
            bounds.push((hi, -dm, -dopi, -dbenz));
        }
    }
    // Removals before additions on the same day keeps the running MME a sum of
    // currently open fills; ties are otherwise order-independent.
    bounds.sort_by(|a, b| a.0.cmp(&b.0).then(a.2.cmp(&b.2)).then(a.3.cmp(&b.3)));

    let recent = (end - 29, end + 1);
    let prior = (end - 59, end - 29);
    let mut out = Sweep::default();
    let (mut mme, mut opi, mut benz) = (0.0f64, 0i32, 0i32);
    let mut i = 0;
    while i < bounds.len() {
        let day = bounds[i].0;
        while i < bounds.len() && bounds[i].0 == day {
            mme += bounds[i].1;
            opi += bounds[i].2;
            benz += bounds[i].3;
            i += 1;
        }
        if opi == 0 {
            // Floating residue from +x/-x pairs is cleared when no opioid is open.
            mme = 0.0;
        }
        let next = bounds.get(i).map_or(day, |b| b.0);
        let len = (next - day) as i64;
        if len == 0 || opi == 0 {
            continue;
        }
        out.covered_days += len;
        out.total_mme += mme * len as f64;
        out.max_mme = out.max_mme.max(mme);
        out.recent_mme += mme * overlap_len(day, next, recent.0, recent.1) as f64;
        out.prior_mme += mme * overlap_len(day, next, prior.0, prior.1) as f64;
        if benz > 0 {
            out.opioid_benzo_days += len;
        }
        if opi >= 2 {
            out.opioid_opioid_days += len;
        }
    }
    out
}

fn check_event(e: &PrescriptionEvent) -> Result<()> {
    let bad = |reason: String| Error::MalformedEvent {
        patient_id: e.patient_id.clone(),
        fill_date: e.fill_date,
        reason,
    };
    if e.days_supply < 1 || e.days_supply > MAX_DAYS_SUPPLY {
        return Err(bad(format!("days_supply {} outside 1..={MAX_DAYS_SUPPLY}", e.days_supply)));
    }
    if !e.mme_per_day.is_finite() || e.mme_per_day < 0.0 {
        return Err(bad(format!("invalid mme_per_day {}", e.mme_per_day)));
    }
    Ok(())
}

/// Patient-level features for one week, or `None` when the patient is
/// inactive. Events must be the patient's fills sorted by date.
pub fn patient_level_features(
    patient: &Patient,
    events: &[PrescriptionEvent],
    week: u32,
) -> Result<Option<PatientLevel>> {
    let end = week_end_day(week);
    let start = end - LOOKBACK_DAYS + 1;
    // Fills up to MAX_DAYS_SUPPLY days before the window can still cover it.
    let from = events.partition_point(|e| e.fill_date < start - MAX_DAYS_SUPPLY);
    let to = events.partition_point(|e| e.fill_date <= end);
    let relevant = &events[from..to];
    for e in relevant {
        check_event(e)?;
    }
    let in_window: Vec<&PrescriptionEvent> =
        relevant.iter().filter(|e| e.fill_date >= start).collect();
    if in_window.is_empty() {
        return Ok(None);
    }

    let mut x = [0.0; N_FEATURES];
    let mut prescribers = HashSet::new();
    let mut pharmacies = HashSet::new();
    let (mut opioid, mut benzo, mut long_acting, mut cash, mut supply, mut last30) =
        (0u32, 0u32, 0u32, 0u32, 0i64, 0u32);
    let mut last_fill = i32::MIN;
    for e in &in_window {
        last_fill = last_fill.max(e.fill_date);
        if e.fill_date > end - 30 {
            last30 += 1;
        }
        match e.drug_class {
            DrugClass::Opioid => {
                opioid += 1;
                supply += e.days_supply as i64;
                prescribers.insert(e.prescriber_id.as_str());
                pharmacies.insert(e.pharmacy_id.as_str());
                long_acting += u32::from(e.long_acting);
                cash += u32::from(e.payment == Payment::Cash);
            }
            DrugClass::Benzodiazepine => benzo += 1,
            DrugClass::Other => {}
        }
    }
    let covering: Vec<&PrescriptionEvent> = relevant.iter().collect();
    let s = sweep(&covering, start, end);

    x[0] = opioid as f64;
    x[1] = benzo as f64;
    x[2] = prescribers.len() as f64;
    x[3] = pharmacies.len() as f64;
    x[4] = if s.covered_days > 0 {
        s.total_mme / s.covered_days as f64
    } else {
        0.0
    };
    x[5] = s.max_mme;
    x[6] = s.total_mme;
    x[7] = supply as f64;
    x[8] = long_acting as f64;
    x[9] = s.opioid_benzo_days as f64;
    x[10] = s.opioid_opioid_days as f64;
    x[11] = if opioid > 0 { cash as f64 / opioid as f64 } else { 0.0 };
    x[12] = (end - last_fill) as f64;
    x[13] = s.recent_mme - s.prior_mme;
    x[14] = last30 as f64;
    x[15] = patient.age as f64;
    x[16] = if patient.gender == Gender::M { 1.0 } else { 0.0 };

    Ok(Some(PatientLevel {
        x,
        all_fills: in_window.len() as u32,
        opioid_fills: opioid,
        cash_opioid_fills: cash,
    }))
}

/// Full feature vector for one patient-week. Inactive patients yield a record
/// with `active = false` and a zero vector.
pub fn compute_features(
    patient: &Patient,
    week: u32,
    events: &[PrescriptionEvent],
    county: &CountyCovariates,
) -> Result<PatientWeekFeatures> {
    let level = patient_level_features(patient, events, week)?;
    let (active, x) = match level {
        Some(l) => (true, with_county(l.x, county)),
        None => (false, [0.0; N_FEATURES]),
    };
    Ok(PatientWeekFeatures {
        patient_id: patient.patient_id.clone(),
        week,
        active,
        x,
    })
}

fn with_county(mut x: [f64; N_FEATURES], c: &CountyCovariates) -> [f64; N_FEATURES] {
    x[17] = c.mean_daily_mme;
    x[18] = c.fills_per_active_patient;
    x[19] = c.cash_proportion;
    x
}

/// One active patient-week with its regions attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub patient_id: String,
    pub week: u32,
    pub zcta: String,
    pub county: String,
    pub x: [f64; N_FEATURES],
}

/// Active patient-weeks, sorted by patient id then week.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
}

pub const FEATURES_FILE: &str = "features.csv";
pub const REGISTRY_FILE: &str = "registry.json";

#[derive(Default)]
struct CountyAcc {
    n: u32,
    mme_sum: f64,
    fills: u64,
    opioid: u64,
    cash: u64,
}

/// Builds the feature table for weeks `0..weeks`. Patient-weeks starting on
/// or after the patient's death are dropped.
pub fn build_feature_table(tables: &CohortTables, weeks: u32) -> Result<FeatureTable> {
    let grouped = tables.events_by_patient();
    let deaths: HashMap<&str, i32> = tables
        .outcomes
        .iter()
        .filter_map(|o: &OutcomeRecord| o.death_day.map(|d| (o.patient_id.as_str(), d)))
        .collect();

    let per_patient: Vec<Vec<(u32, PatientLevel)>> = tables
        .patients
        .par_iter()
        .zip(grouped.par_iter())
        .map(|(p, events)| {
            let death = deaths.get(p.patient_id.as_str()).copied();
            let mut out = Vec::new();
            for w in 0..weeks {
                if death.is_some_and(|d| d <= week_end_day(w)) {
                    break;
                }
                if let Some(level) = patient_level_features(p, events, w)? {
                    out.push((w, level));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let mut county: BTreeMap<(&str, u32), CountyAcc> = BTreeMap::new();
    for (p, weeks) in tables.patients.iter().zip(&per_patient) {
        for (w, l) in weeks {
            let acc = county.entry((p.county.as_str(), *w)).or_default();
            acc.n += 1;
            acc.mme_sum += l.x[4];
            acc.fills += l.all_fills as u64;
            acc.opioid += l.opioid_fills as u64;
            acc.cash += l.cash_opioid_fills as u64;
        }
    }
    let covariates: HashMap<(&str, u32), CountyCovariates> = county
        .into_iter()
        .map(|(k, a)| {
            let c = CountyCovariates {
                mean_daily_mme: a.mme_sum / a.n as f64,
                fills_per_active_patient: a.fills as f64 / a.n as f64,
                cash_proportion: if a.opioid > 0 {
                    a.cash as f64 / a.opioid as f64
                } else {
                    0.0
                },
            };
            (k, c)
        })
        .collect();

    let mut rows = Vec::new();
    for (p, weeks) in tables.patients.iter().zip(per_patient) {
        for (w, l) in weeks {
            let c = covariates[&(p.county.as_str(), w)];
            rows.push(FeatureRow {
                patient_id: p.patient_id.clone(),
                week: w,
                zcta: p.zcta.clone(),
                county: p.county.clone(),
                x: with_county(l.x, &c),
            });
        }
    }
    Ok(FeatureTable { rows })
}

impl FeatureTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let ctx = path.display().to_string();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
        let mut header = vec!["patient_id", "week", "zcta", "county"];
        header.extend(feature_names());
        w.write_record(&header).map_err(|e| Error::parse(&*ctx, e))?;
        for r in &self.rows {
            let mut rec = vec![r.patient_id.clone(), r.week.to_string(), r.zcta.clone(), r.county.clone()];
            rec.extend(r.x.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| Error::parse(&*ctx, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let ctx = path.display().to_string();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(&*ctx, e))?;
        let header = r.headers().map_err(|e| Error::parse(&*ctx, e))?.clone();
        let expected: Vec<&str> = ["patient_id", "week", "zcta", "county"]
            .into_iter()
            .chain(feature_names())
            .collect();
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(Error::RegistryMismatch {
                expected: REGISTRY_VERSION.into(),
                found: "feature file with different columns".into(),
            });
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::parse(&*ctx, e))?;
            let mut x = [0.0; N_FEATURES];
            for (i, v) in x.iter_mut().enumerate() {
                *v = rec[4 + i].parse().map_err(|e| Error::parse(&*ctx, e))?;
            }
            rows.push(FeatureRow {
                patient_id: rec[0].to_string(),
                week: rec[1].parse().map_err(|e| Error::parse(&*ctx, e))?,
                zcta: rec[2].to_string(),
                county: rec[3].to_string(),
                x,
            });
        }
        Ok(Self { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patient() -> Patient {
        Patient {
            patient_id: "P1".into(),
            zcta: "10000".into(),
            county: "C000".into(),
            age: 40,
            gender: Gender::F,
        }
    }

    fn fill(day: i32, class: DrugClass, mme: f64, supply: i32, payment: Payment) -> PrescriptionEvent {
        PrescriptionEvent {
            patient_id: "P1".into(),
            fill_date: day,
            drug_class: class,
            mme_per_day: mme,
            days_supply: supply,
            payment,
            prescriber_id: format!("DR{day}"),
            pharmacy_id: "PH1".into(),
            long_acting: false,
        }
    }

    #[test]
    fn registry_shape() {
        assert_eq!(REGISTRY.len(), N_FEATURES);
        let names: HashSet<_> = feature_names().collect();
        assert_eq!(names.len(), N_FEATURES);
        for (i, f) in REGISTRY.iter().enumerate() {
            assert_eq!(f.index, i);
        }
        assert_eq!(feature_index("cash_fill_proportion"), Some(11));
    }

    #[test]
    fn activity_window() {
        // week 30 ends on day 216
        let end = week_end_day(30);
        let at = |d| vec![fill(d, DrugClass::Other, 0.0, 5, Payment::Insurance)];
        assert!(is_active(&at(end - 30), 30));
        assert!(is_active(&at(end - 179), 30));
        assert!(!is_active(&at(end - 180), 30));
        assert!(!is_active(&at(end - 181), 30));
        assert!(!is_active(&at(end + 1), 30));
        assert!(!is_active(&[], 30));
    }

    #[test]
    fn opioid_benzo_overlap() {
        let events = vec![
            fill(1, DrugClass::Opioid, 10.0, 10, Payment::Insurance),
            fill(5, DrugClass::Benzodiazepine, 0.0, 10, Payment::Insurance),
        ];
        let f = compute_features(&patient(), 2, &events, &CountyCovariates::default()).unwrap();
        assert!(f.active);
        assert_eq!(f.x[9], 6.0);
        assert_eq!(f.x[10], 0.0);
    }

    #[test]
    fn cash_proportion() {
        let events = vec![
            fill(0, DrugClass::Opioid, 5.0, 7, Payment::Cash),
            fill(10, DrugClass::Opioid, 5.0, 7, Payment::Insurance),
            fill(20, DrugClass::Opioid, 5.0, 7, Payment::Cash),
            fill(30, DrugClass::Opioid, 5.0, 7, Payment::Other),
            fill(31, DrugClass::Other, 0.0, 7, Payment::Cash),
        ];
        let f = compute_features(&patient(), 5, &events, &CountyCovariates::default()).unwrap();
        assert_eq!(f.x[0], 4.0);
        assert_eq!(f.x[11], 0.5);
    }

    #[test]
    fn two_fill_mme_by_day_expansion() {
        // 30 days at 60 MME from day 0 and 15 days at 20 MME from day 20.
        let events = vec![
            fill(0, DrugClass::Opioid, 60.0, 30, Payment::Insurance),
            fill(20, DrugClass::Opioid, 20.0, 15, Payment::Insurance),
        ];
        let f = compute_features(&patient(), 10, &events, &CountyCovariates::default()).unwrap();
        // days 0..=29 at 60, days 20..=34 at +20: covered 0..=34 (35 days)
        // total = 30*60 + 15*20 = 2100; max = 80 on days 20..=29
        assert_eq!(f.x[6], 2100.0);
        assert_eq!(f.x[4], 2100.0 / 35.0);
        assert_eq!(f.x[5], 80.0);
        assert_eq!(f.x[10], 10.0);
        assert_eq!(f.x[7], 45.0);
    }

    #[test]
    fn inactive_record_is_zero() {
        let events = vec![fill(0, DrugClass::Opioid, 60.0, 30, Payment::Insurance)];
        let f = compute_features(&patient(), 40, &events, &CountyCovariates::default()).unwrap();
        assert!(!f.active);
        assert!(f.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn malformed_supply_is_rejected() {
        let events = vec![fill(3, DrugClass::Opioid, 60.0, -2, Payment::Insurance)];
        let err = compute_features(&patient(), 1, &events, &CountyCovariates::default()).unwrap_err();
        assert!(matches!(err, Error::MalformedEvent { .. }), "{err}");
        assert!(err.to_string().contains("days_supply"));
    }

    #[test]
    fn fill_before_window_still_covers_it() {
        // week 26 ends on day 188; window starts on day 9
        let events = vec![
            fill(0, DrugClass::Opioid, 40.0, 30, Payment::Insurance),
            fill(100, DrugClass::Other, 0.0, 30, Payment::Insurance),
        ];
        let f = compute_features(&patient(), 26, &events, &CountyCovariates::default()).unwrap();
        // only days 9..=29 of the opioid fill are inside
        assert_eq!(f.x[6], 21.0 * 40.0);
        assert_eq!(f.x[0], 0.0);
    }

    #[test]
    fn monthly_change() {
        // week 9 ends on day 69; recent = 40..=69, prior = 10..=39
        let events = vec![
            fill(10, DrugClass::Opioid, 10.0, 30, Payment::Insurance),
            fill(40, DrugClass::Opioid, 30.0, 10, Payment::Insurance),
        ];
        let f = compute_features(&patient(), 9, &events, &CountyCovariates::default()).unwrap();
        assert_eq!(f.x[13], 300.0 - 300.0);
        let events = vec![fill(35, DrugClass::Opioid, 10.0, 20, Payment::Insurance)];
        let f = compute_features(&patient(), 9, &events, &CountyCovariates::default()).unwrap();
        // days 35..=39 prior (50), 40..=54 recent (150)
        assert_eq!(f.x[13], 100.0);
    }
}
