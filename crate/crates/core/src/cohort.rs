//! Deterministic synthetic cohort: patients, prescription fills, and fatal
//! overdose outcomes with planted spatial and temporal risk structure.
//!
//! Death hazard is a per-patient-week logistic function of a small set of
//! planted risk features computed from the fills seen before the week starts:
//!
//! ```text
//! hazard(p, w) = sigmoid(intercept + linear(p, w) + region_effect(zcta) + ln(multiplier))
//! ```
//!
//! The intercept is solved by bisection so that the expected fraction of
//! patients dying within the first 26 weeks equals `base_death_rate`.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use chrono::NaiveDate;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geography::{GeographyIndex, Level};
use crate::sigmoid;

/// Days of prescription history simulated before day 0, so week 0 has a full
/// lookback.
pub const HISTORY_DAYS: i32 = 180;
/// Outcome window following each scored week.
pub const OUTCOME_WINDOW_DAYS: i32 = 182;
/// Longest allowed single-fill supply.
pub const MAX_DAYS_SUPPLY: i32 = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrugClass {
    Opioid,
    Benzodiazepine,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payment {
    Cash,
    Insurance,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    pub patient_id: String,
    pub zcta: String,
    /// County of residence; usually the ZCTA's nominal county, but ZCTAs that
    /// straddle county lines give some patients a different one.
    pub county: String,
    pub age: u8,
    pub gender: Gender,
}

/// One controlled-substance dispensation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrescriptionEvent {
    pub patient_id: String,
    /// Day index from cohort start; negative for pre-start history.
    pub fill_date: i32,
    pub drug_class: DrugClass,
    pub mme_per_day: f64,
    pub days_supply: i32,
    pub payment: Payment,
    pub prescriber_id: String,
    pub pharmacy_id: String,
    pub long_acting: bool,
}

impl PrescriptionEvent {
    /// Last calendar day covered by the fill.
    pub fn last_covered_day(&self) -> i32 {
        self.fill_date + self.days_supply - 1
    }

    pub fn is_opioid(&self) -> bool {
        self.drug_class == DrugClass::Opioid
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub patient_id: String,
    pub death_day: Option<i32>,
}

/// Odds multiplier applied to every patient living in a ZCTA or county.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRisk {
    pub region_id: String,
    pub multiplier: f64,
}

/// A region whose prescribing mix shifts towards riskier fills from `week` on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shock {
    pub region_id: String,
    pub week: u32,
    #[serde(default = "default_intensity")]
    pub intensity: f64,
}

fn default_intensity() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortConfig {
    pub n_patients: usize,
    pub weeks: u32,
    /// Expected fraction of patients dying within 26 weeks.
    pub base_death_rate: f64,
    /// Standard deviation of the per-ZCTA log-odds effect.
    pub region_effect_sd: f64,
    /// Probability that a patient's county differs from the ZCTA's nominal one.
    pub county_straddle_rate: f64,
    pub start_date: NaiveDate,
    pub region_risk: Vec<RegionRisk>,
    pub shock: Option<Shock>,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_patients: 2000,
            weeks: 26,
            base_death_rate: 0.004,
            region_effect_sd: 0.35,
            county_straddle_rate: 0.02,
            start_date: NaiveDate::from_ymd_opt(2020, 12, 6).expect("valid date"),
            region_risk: Vec::new(),
            shock: None,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 1 {
            return Err(Error::Config("n_patients must be at least 1".into()));
        }
        if self.weeks < 2 {
            return Err(Error::Config("weeks must be at least 2".into()));
        }
        if !(self.base_death_rate > 0.0 && self.base_death_rate <= 0.01) {
            return Err(Error::Config(format!(
                "base_death_rate {} outside (0, 0.01]",
                self.base_death_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.county_straddle_rate) {
            return Err(Error::Config("county_straddle_rate outside [0, 1]".into()));
        }
        if !(self.region_effect_sd >= 0.0 && self.region_effect_sd.is_finite()) {
            return Err(Error::Config("region_effect_sd must be non-negative".into()));
        }
        for r in &self.region_risk {
            if !(r.multiplier > 0.0 && r.multiplier.is_finite()) {
                return Err(Error::Config(format!(
                    "region multiplier for {} must be positive",
                    r.region_id
                )));
            }
        }
        if let Some(s) = &self.shock {
            if s.week >= self.weeks {
                return Err(Error::Config("shock week beyond simulated weeks".into()));
            }
            if !(s.intensity >= 0.0 && s.intensity.is_finite()) {
                return Err(Error::Config("shock intensity must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("cohort config", e))
    }

    /// Total simulated days from day 0: scored weeks plus one outcome window.
    pub fn horizon_days(&self) -> i32 {
        self.weeks as i32 * 7 + OUTCOME_WINDOW_DAYS
    }

    /// Weeks for which a death hazard is drawn.
    pub fn hazard_weeks(&self) -> u32 {
        (self.horizon_days() as u32).div_ceil(7)
    }
}

/// Ground truth of the planted hazard, kept so tests can query it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardModel {
    pub intercept: f64,
    /// Per-ZCTA log-odds offset, including configured multipliers of the ZCTA
    /// itself. County multipliers are applied through `county_offsets`.
    pub zcta_offsets: BTreeMap<String, f64>,
    pub county_offsets: BTreeMap<String, f64>,
}

impl HazardModel {
    fn region_offset(&self, patient: &Patient) -> f64 {
        self.zcta_offsets.get(&patient.zcta).copied().unwrap_or(0.0)
            + self.county_offsets.get(&patient.county).copied().unwrap_or(0.0)
    }
}

/// Planted risk features at a reference day, computed from fills strictly
/// before it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantedRisk {
    pub active: bool,
    /// Mean daily MME over the trailing 30 days, uncovered days counting as 0.
    pub recent_mme: f64,
    /// Fraction of the trailing 30 days covered by both an opioid and a
    /// benzodiazepine.
    pub overlap_fraction: f64,
    pub opioid_prescribers: usize,
    pub cash_share: f64,
}

impl PlantedRisk {
    /// Linear log-odds contribution, excluding intercept and region effects.
    pub fn linear(&self, patient: &Patient) -> f64 {
        let demographic = if patient.gender == Gender::M { 0.3 } else { 0.0 } + 0.03 * (f64::from(patient.age) - 50.0);
        if !self.active {
            return demographic - 3.0;
        }
        demographic
            + 2.5 * (1.0 + self.recent_mme / 15.0).ln()
            + 4.0 * self.overlap_fraction
            + 0.9 * self.opioid_prescribers.saturating_sub(1) as f64
            + 2.5 * self.cash_share
    }
}

/// Planted features for a patient at the start of `day` (fills on `day` or
/// later are ignored).
pub fn planted_risk(events: &[PrescriptionEvent], day: i32) -> PlantedRisk {
    let recent_start = day - 30;
    let lookback_start = day - 180;
    let mut risk = PlantedRisk::default();
    let mut prescribers = HashSet::new();
    let (mut opioid_fills, mut cash_fills) = (0usize, 0usize);
    let mut daily_mme = [0.0f64; 30];
    let mut opioid_day = [false; 30];
    let mut benzo_day = [false; 30];
    for e in events.iter().take_while(|e| e.fill_date < day) {
        if e.fill_date >= lookback_start {
            risk.active = true;
            if e.is_opioid() {
                opioid_fills += 1;
                prescribers.insert(e.prescriber_id.as_str());
                if e.payment == Payment::Cash {
                    cash_fills += 1;
                }
            }
        }
        let lo = e.fill_date.max(recent_start);
        let hi = e.last_covered_day().min(day - 1);
        for d in lo..=hi {
            let slot = (d - recent_start) as usize;
            match e.drug_class {
                DrugClass::Opioid => {
                    daily_mme[slot] += e.mme_per_day;
                    opioid_day[slot] = true;
                }
                DrugClass::Benzodiazepine => benzo_day[slot] = true,
                DrugClass::Other => {}
            }
        }
    }
    risk.recent_mme = daily_mme.iter().sum::<f64>() / 30.0;
    risk.overlap_fraction = opioid_day
        .iter()
        .zip(&benzo_day)
        .filter(|(o, b)| **o && **b)
        .count() as f64
        / 30.0;
    risk.opioid_prescribers = prescribers.len();
    risk.cash_share = if opioid_fills > 0 {
        cash_fills as f64 / opioid_fills as f64
    } else {
        0.0
    };
    risk
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub config: CohortConfig,
    pub seed: u64,
    pub patients: Vec<Patient>,
    /// Sorted by patient id, then fill date.
    pub events: Vec<PrescriptionEvent>,
    pub outcomes: Vec<OutcomeRecord>,
    pub hazard: HazardModel,
}

impl Cohort {
    /// Event slices aligned with `patients`.
    pub fn events_by_patient(&self) -> Vec<&[PrescriptionEvent]> {
        group_events(&self.patients, &self.events)
    }

    /// Planted weekly death hazard for patient `idx` in `week`, using fills
    /// before the week's first day.
    pub fn planted_hazard(&self, idx: usize, events: &[PrescriptionEvent], week: u32) -> f64 {
        let patient = &self.patients[idx];
        let risk = planted_risk(events, week as i32 * 7);
        sigmoid(self.hazard.intercept + risk.linear(patient) + self.hazard.region_offset(patient))
    }

    /// Checks referential integrity and value ranges.
    pub fn validate(&self, geo: &GeographyIndex) -> Result<()> {
        let horizon = self.config.horizon_days();
        let mut ids = HashSet::with_capacity(self.patients.len());
        for p in &self.patients {
            if !ids.insert(p.patient_id.as_str()) {
                return Err(Error::Config(format!("duplicate patient {}", p.patient_id)));
            }
            if geo.region(Level::Zcta, &p.zcta).is_none()
                || geo.region(Level::County, &p.county).is_none()
            {
                return Err(Error::UnknownRegion(format!("{}/{}", p.zcta, p.county)));
            }
            if !(18..=100).contains(&p.age) {
                return Err(Error::Config(format!("age {} out of range", p.age)));
            }
        }
        for e in &self.events {
            if !ids.contains(e.patient_id.as_str()) {
                return Err(Error::Config(format!("event for unknown patient {}", e.patient_id)));
            }
            if (e.mme_per_day > 0.0) != e.is_opioid() || e.mme_per_day < 0.0 {
                return Err(Error::MalformedEvent {
                    patient_id: e.patient_id.clone(),
                    fill_date: e.fill_date,
                    reason: "mme_per_day must be positive exactly for opioid fills".into(),
                });
            }
            if !(1..=MAX_DAYS_SUPPLY).contains(&e.days_supply) {
                return Err(Error::MalformedEvent {
                    patient_id: e.patient_id.clone(),
                    fill_date: e.fill_date,
                    reason: format!("days_supply {} outside 1..={MAX_DAYS_SUPPLY}", e.days_supply),
                });
            }
        }
        for o in &self.outcomes {
            if !ids.contains(o.patient_id.as_str()) {
                return Err(Error::Config(format!("outcome for unknown patient {}", o.patient_id)));
            }
            if let Some(d) = o.death_day {
                if !(0..horizon).contains(&d) {
                    return Err(Error::Config(format!("death day {d} outside horizon")));
                }
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::io::write_csv(&dir.join(PATIENTS_FILE), &self.patients)?;
        crate::io::write_csv(&dir.join(EVENTS_FILE), &self.events)?;
        crate::io::write_csv(&dir.join(OUTCOMES_FILE), &self.outcomes)?;
        Ok(())
    }
}

pub const PATIENTS_FILE: &str = "patients.csv";
pub const EVENTS_FILE: &str = "events.csv";
pub const OUTCOMES_FILE: &str = "outcomes.csv";

/// Splits a patient-then-date sorted event list into per-patient slices
/// aligned with `patients` (which must be in the same id order).
pub fn group_events<'a>(
    patients: &[Patient],
    events: &'a [PrescriptionEvent],
) -> Vec<&'a [PrescriptionEvent]> {
    let mut out = Vec::with_capacity(patients.len());
    let mut start = 0;
    for p in patients {
        let len = events[start..]
            .iter()
            .take_while(|e| e.patient_id == p.patient_id)
            .count();
        out.push(&events[start..start + len]);
        start += len;
    }
    out
}

/// Patients, events, and outcomes as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortTables {
    pub patients: Vec<Patient>,
    pub events: Vec<PrescriptionEvent>,
    pub outcomes: Vec<OutcomeRecord>,
}

impl CohortTables {
    pub fn read_csv(dir: &Path) -> Result<Self> {
        let mut patients: Vec<Patient> = crate::io::read_csv(&dir.join(PATIENTS_FILE))?;
        let mut events: Vec<PrescriptionEvent> = crate::io::read_csv(&dir.join(EVENTS_FILE))?;
        let outcomes = crate::io::read_csv(&dir.join(OUTCOMES_FILE))?;
        patients.sort_by(|a, b| a.patient_id.cmp(&b.patient_id));
        events.sort_by(|a, b| {
            a.patient_id
                .cmp(&b.patient_id)
                .then(a.fill_date.cmp(&b.fill_date))
        });
        Ok(Self {
            patients,
            events,
            outcomes,
        })
    }

    pub fn events_by_patient(&self) -> Vec<&[PrescriptionEvent]> {
        group_events(&self.patients, &self.events)
    }
}

impl From<Cohort> for CohortTables {
    fn from(c: Cohort) -> Self {
        Self {
            patients: c.patients,
            events: c.events,
            outcomes: c.outcomes,
        }
    }
}

struct Traits {
    opioid_user: bool,
    chronic: bool,
    dose: f64,
    benzo_prob: f64,
    cash_prob: f64,
    long_acting_prob: f64,
    prescribers: Vec<u32>,
    pharmacies: Vec<u32>,
}

struct Shift {
    from_day: i32,
    intensity: f64,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn simulate_patient(
    idx: usize,
    seed: u64,
    config: &CohortConfig,
    geo: &GeographyIndex,
    zcta_weights: &WeightedIndex<f64>,
    n_prescribers: u32,
    n_pharmacies: u32,
) -> (Patient, Vec<PrescriptionEvent>, ChaCha8Rng) {
    let mut rng = rng_for(seed, idx as u64 + 1);
    let zctas = geo.regions(Level::Zcta);
    let counties = geo.regions(Level::County);
    let zcta = &zctas[zcta_weights.sample(&mut rng)];
    let nominal = zcta.county_id.clone().expect("zcta has county");
    let county = if counties.len() > 1 && rng.random_bool(config.county_straddle_rate) {
        let others: Vec<&str> = counties
            .iter()
            .map(|c| c.id.as_str())
            .filter(|c| *c != nominal)
            .collect();
        others[rng.random_range(0..others.len())].to_string()
    } else {
        nominal
    };
    let age_draw: f64 = Normal::new(50.0, 16.0).expect("valid normal").sample(&mut rng);
    let patient = Patient {
        patient_id: format!("P{idx:07}"),
        zcta: zcta.id.clone(),
        county,
        age: age_draw.round().clamp(18.0, 100.0) as u8,
        gender: if rng.random_bool(0.47) { Gender::M } else { Gender::F },
    };

    let shopper = rng.random_bool(0.06);
    let pool = |rng: &mut ChaCha8Rng, n: u32, size: usize| -> Vec<u32> {
        (0..size).map(|_| rng.random_range(0..n)).collect()
    };
    let n_presc = if shopper { rng.random_range(3..=6) } else { rng.random_range(1..=2) };
    let n_pharm = if shopper { rng.random_range(2..=5) } else { rng.random_range(1..=2) };
    let high_dose_group = rng.random_bool(0.15);
    let dose_median: f64 = if high_dose_group { 90.0 } else { 20.0 };
    let traits = Traits {
        opioid_user: rng.random_bool(0.8),
        chronic: rng.random_bool(0.2),
        dose: LogNormal::new(dose_median.ln(), 0.5)
            .expect("valid lognormal")
            .sample(&mut rng)
            .clamp(2.0, 400.0),
        benzo_prob: if rng.random_bool(0.12) { 0.6 } else { 0.06 },
        cash_prob: if rng.random_bool(0.08) { 0.6 } else { 0.04 },
        long_acting_prob: if high_dose_group { 0.5 } else { 0.08 },
        prescribers: pool(&mut rng, n_prescribers, n_presc),
        pharmacies: pool(&mut rng, n_pharmacies, n_pharm),
    };

    let shift = config.shock.as_ref().and_then(|s| {
        (s.region_id == patient.zcta || s.region_id == patient.county).then(|| Shift {
            from_day: s.week as i32 * 7,
            intensity: s.intensity,
        })
    });

    let horizon = config.horizon_days();
    let score_end = config.weeks as i32 * 7;
    let episodes: Vec<(i32, i32)> = if traits.chronic {
        vec![(-HISTORY_DAYS + rng.random_range(0..30), horizon)]
    } else {
        let n = 1 + usize::from(rng.random_bool(0.5)) + usize::from(rng.random_bool(0.2));
        let mut eps: Vec<(i32, i32)> = (0..n)
            .map(|_| {
                let start = rng.random_range(-HISTORY_DAYS..score_end + 60);
                let len = 1.0 + rng.random::<f64>().max(1e-12).ln().abs() * 75.0;
                (start, start + len as i32)
            })
            .collect();
        eps.sort_unstable();
        eps
    };

    let mut events = Vec::new();
    for (start, end) in episodes {
        let mut t = start;
        while t < end.min(horizon) {
            let shifted = shift.as_ref().filter(|s| t >= s.from_day);
            let boost = shifted.map_or(0.0, |s| s.intensity);
            let benzo_prob = (traits.benzo_prob + 0.35 * boost).min(0.9);
            let cash_prob = (traits.cash_prob + 0.3 * boost).min(0.9);
            let pick = |rng: &mut ChaCha8Rng, from: &[u32]| from[rng.random_range(0..from.len())];
            let payment = |rng: &mut ChaCha8Rng| {
                if rng.random_bool(cash_prob) {
                    Payment::Cash
                } else if rng.random_bool(0.9) {
                    Payment::Insurance
                } else {
                    Payment::Other
                }
            };

            let supply = if traits.chronic {
                30
            } else {
                [7, 14, 30, 30][rng.random_range(0..4)]
            };
            if traits.opioid_user {
                let jitter: f64 = LogNormal::new(0.0, 0.15).expect("valid").sample(&mut rng);
                let mme = round1((traits.dose * (1.0 + boost) * jitter).clamp(0.5, 1000.0));
                events.push(PrescriptionEvent {
                    patient_id: patient.patient_id.clone(),
                    fill_date: t,
                    drug_class: DrugClass::Opioid,
                    mme_per_day: mme,
                    days_supply: supply,
                    payment: payment(&mut rng),
                    prescriber_id: format!("DR{:05}", pick(&mut rng, &traits.prescribers)),
                    pharmacy_id: format!("PH{:04}", pick(&mut rng, &traits.pharmacies)),
                    long_acting: rng.random_bool(traits.long_acting_prob),
                });
            }
            if !traits.opioid_user || rng.random_bool(benzo_prob) {
                let class = if traits.opioid_user || rng.random_bool(0.5) {
                    DrugClass::Benzodiazepine
                } else {
                    DrugClass::Other
                };
                events.push(PrescriptionEvent {
                    patient_id: patient.patient_id.clone(),
                    fill_date: t + rng.random_range(0..5),
                    drug_class: class,
                    mme_per_day: 0.0,
                    days_supply: 30,
                    payment: payment(&mut rng),
                    prescriber_id: format!("DR{:05}", pick(&mut rng, &traits.prescribers)),
                    pharmacy_id: format!("PH{:04}", pick(&mut rng, &traits.pharmacies)),
                    long_acting: false,
                });
            }
            if rng.random_bool(0.15) {
                events.push(PrescriptionEvent {
                    patient_id: patient.patient_id.clone(),
                    fill_date: t + rng.random_range(0..10),
                    drug_class: DrugClass::Other,
                    mme_per_day: 0.0,
                    days_supply: rng.random_range(5..=30),
                    payment: payment(&mut rng),
                    prescriber_id: format!("DR{:05}", rng.random_range(0..n_prescribers)),
                    pharmacy_id: format!("PH{:04}", pick(&mut rng, &traits.pharmacies)),
                    long_acting: false,
                });
            }
            t += supply + rng.random_range(0..=10);
        }
    }
    events.retain(|e| e.fill_date < horizon);
    events.sort_by_key(|e| e.fill_date);
    (patient, events, rng)
}

/// Generates a cohort over `geo`. Output is a pure function of the arguments.
pub fn generate_cohort(geo: &GeographyIndex, config: &CohortConfig, seed: u64) -> Result<Cohort> {
    config.validate()?;
    for r in &config.region_risk {
        if geo.level_of(&r.region_id).is_none() {
            return Err(Error::UnknownRegion(r.region_id.clone()));
        }
    }
    if let Some(s) = &config.shock {
        if geo.level_of(&s.region_id).is_none() {
            return Err(Error::UnknownRegion(s.region_id.clone()));
        }
    }

    // Stream 0 draws region-level quantities.
    let mut region_rng = rng_for(seed, 0);
    let zctas = geo.regions(Level::Zcta);
    let size_dist = LogNormal::new(0.0, 0.8).expect("valid lognormal");
    let weights: Vec<f64> = zctas.iter().map(|_| size_dist.sample(&mut region_rng)).collect();
    let zcta_weights = WeightedIndex::new(&weights).map_err(|e| Error::Config(e.to_string()))?;
    let effect = Normal::new(0.0, config.region_effect_sd).map_err(|e| Error::Config(e.to_string()))?;
    let mut zcta_offsets: BTreeMap<String, f64> = zctas
        .iter()
        .map(|z| (z.id.clone(), effect.sample(&mut region_rng)))
        .collect();
    let mut county_offsets = BTreeMap::new();
    for r in &config.region_risk {
        match geo.level_of(&r.region_id) {
            Some(Level::Zcta) => *zcta_offsets.get_mut(&r.region_id).expect("known") += r.multiplier.ln(),
            _ => *county_offsets.entry(r.region_id.clone()).or_insert(0.0) += r.multiplier.ln(),
        }
    }

    let n_prescribers = (config.n_patients as u32 / 20).max(50);
    let n_pharmacies = (config.n_patients as u32 / 50).max(20);
    let sims: Vec<(Patient, Vec<PrescriptionEvent>, ChaCha8Rng)> = (0..config.n_patients)
        .into_par_iter()
        .map(|i| simulate_patient(i, seed, config, geo, &zcta_weights, n_prescribers, n_pharmacies))
        .collect();

    let hazard_weeks = config.hazard_weeks();
    let mut hazard = HazardModel {
        intercept: 0.0,
        zcta_offsets,
        county_offsets,
    };
    // Linear predictor per patient-week, intercept excluded.
    let linear: Vec<Vec<f64>> = sims
        .par_iter()
        .map(|(p, events, _)| {
            let offset = hazard.region_offset(p);
            (0..hazard_weeks)
                .map(|w| planted_risk(events, w as i32 * 7).linear(p) + offset)
                .collect()
        })
        .collect();

    let six_month_weeks = 26usize.min(hazard_weeks as usize);
    let expected_rate = |b: f64| -> f64 {
        linear
            .iter()
            .map(|lp| {
                let survive: f64 = lp[..six_month_weeks]
                    .iter()
                    .map(|l| 1.0 - sigmoid(b + l))
                    .product();
                1.0 - survive
            })
            .sum::<f64>()
            / linear.len() as f64
    };
    let (mut lo, mut hi) = (-40.0f64, 10.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if expected_rate(mid) < config.base_death_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hazard.intercept = 0.5 * (lo + hi);

    let mut patients = Vec::with_capacity(sims.len());
    let mut events = Vec::new();
    let mut outcomes = Vec::with_capacity(sims.len());
    for ((patient, mut evs, mut rng), lp) in sims.into_iter().zip(&linear) {
        let mut death_day = None;
        for (w, l) in lp.iter().enumerate() {
            let u: f64 = rng.random();
            if u < sigmoid(hazard.intercept + l) {
                death_day = Some(w as i32 * 7 + rng.random_range(0..7));
                break;
            }
        }
        if let Some(d) = death_day {
            evs.retain(|e| e.fill_date <= d);
        }
        outcomes.push(OutcomeRecord {
            patient_id: patient.patient_id.clone(),
            death_day: death_day.filter(|d| *d < config.horizon_days()),
        });
        events.extend(evs);
        patients.push(patient);
    }

    Ok(Cohort {
        config: config.clone(),
        seed,
        patients,
        events,
        outcomes,
        hazard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geography::synth_grid_geography;

    fn grid() -> GeographyIndex {
        synth_grid_geography(4, 4, 2, 7).unwrap()
    }

    #[test]
    fn rejects_bad_config() {
        let geo = grid();
        let bad = [
            CohortConfig { n_patients: 0, ..Default::default() },
            CohortConfig { weeks: 1, ..Default::default() },
            CohortConfig { base_death_rate: 0.0, ..Default::default() },
            CohortConfig { base_death_rate: 0.02, ..Default::default() },
        ];
        for cfg in bad {
            assert!(generate_cohort(&geo, &cfg, 1).is_err(), "{cfg:?}");
        }
        let cfg = CohortConfig {
            shock: Some(Shock { region_id: "nope".into(), week: 3, intensity: 1.0 }),
            ..Default::default()
        };
        assert!(generate_cohort(&geo, &cfg, 1).is_err());
    }

    #[test]
    fn referential_integrity() {
        let geo = grid();
        let cfg = CohortConfig { n_patients: 500, ..Default::default() };
        let cohort = generate_cohort(&geo, &cfg, 3).unwrap();
        cohort.validate(&geo).unwrap();
        assert_eq!(cohort.patients.len(), 500);
        assert_eq!(cohort.outcomes.len(), 500);
        let grouped = cohort.events_by_patient();
        assert_eq!(grouped.iter().map(|g| g.len()).sum::<usize>(), cohort.events.len());
        for (p, evs) in cohort.patients.iter().zip(&grouped) {
            assert!(evs.iter().all(|e| e.patient_id == p.patient_id));
            assert!(evs.windows(2).all(|w| w[0].fill_date <= w[1].fill_date));
        }
        // no fills after death
        for (o, evs) in cohort.outcomes.iter().zip(&grouped) {
            if let Some(d) = o.death_day {
                assert!(evs.iter().all(|e| e.fill_date <= d));
            }
        }
    }

    #[test]
    fn planted_risk_reads_recent_window() {
        let ev = |day, class, mme: f64, payment| PrescriptionEvent {
            patient_id: "P".into(),
            fill_date: day,
            drug_class: class,
            mme_per_day: mme,
            days_supply: 10,
            payment,
            prescriber_id: format!("D{day}"),
            pharmacy_id: "X".into(),
            long_acting: false,
        };
        let events = vec![
            ev(0, DrugClass::Opioid, 30.0, Payment::Cash),
            ev(5, DrugClass::Benzodiazepine, 0.0, Payment::Insurance),
            ev(20, DrugClass::Opioid, 60.0, Payment::Insurance),
        ];
        let r = planted_risk(&events, 30);
        assert!(r.active);
        assert!((r.recent_mme - (300.0 + 600.0) / 30.0).abs() < 1e-12);
        assert!((r.overlap_fraction - 5.0 / 30.0).abs() < 1e-12);
        assert_eq!(r.opioid_prescribers, 2);
        assert!((r.cash_share - 0.5).abs() < 1e-12);

        // fills on the reference day itself are not yet visible
        assert!(!planted_risk(&events, 0).active);
        assert!(!planted_risk(&events, 400).active);
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg = CohortConfig::from_toml(
            "n_patients = 100\nweeks = 8\n[shock]\nregion_id = \"10005\"\nweek = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.n_patients, 100);
        assert_eq!(cfg.shock.as_ref().unwrap().intensity, 1.0);
        assert!(CohortConfig::from_toml("n_patinets = 3").is_err());
    }
}
