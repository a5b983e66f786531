use proptest::prelude::*;
use regionrisk::cohort::{DrugClass, Gender, Patient, Payment, PrescriptionEvent};
use regionrisk::features::{patient_level_features, week_end_day, LOOKBACK_DAYS, N_FEATURES};

fn patient() -> Patient {
    Patient {
        patient_id: "P0000001".into(),
        zcta: "10000".into(),
        county: "C000".into(),
        age: 41,
        gender: Gender::F,
    }
}

#[allow(clippy::too_many_arguments)]
fn event(day: i32, class: DrugClass, mme: f64, supply: i32, prescriber: u8, pharmacy: u8, cash: bool, la: bool) -> PrescriptionEvent {
    PrescriptionEvent {
        patient_id: "P0000001".into(),
        fill_date: day,
        drug_class: class,
        mme_per_day: if class == DrugClass::Opioid { mme } else { 0.0 },
        days_supply: supply,
        payment: if cash { Payment::Cash } else { Payment::Insurance },
        prescriber_id: format!("DR{prescriber}"),
        pharmacy_id: format!("PH{pharmacy}"),
        long_acting: la,
    }
}

fn arb_class() -> impl Strategy<Value = DrugClass> {
    prop_oneof![
        3 => Just(DrugClass::Opioid),
        1 => Just(DrugClass::Benzodiazepine),
        1 => Just(DrugClass::Other),
    ]
}

// Quarter-unit MME keeps every partial sum exact in binary floating point.
fn arb_event(lo: i32, hi: i32) -> impl Strategy<Value = PrescriptionEvent> {
    (lo..hi, arb_class(), 1u32..800, 1i32..=90, 0u8..5, 0u8..5, any::<bool>(), any::<bool>())
        .prop_map(|(d, c, q, s, pr, ph, cash, la)| event(d, c, f64::from(q) / 4.0, s, pr, ph, cash, la))
}

fn arb_events(max: usize) -> impl Strategy<Value = Vec<PrescriptionEvent>> {
    prop::collection::vec(arb_event(-320, 200), 0..max).prop_map(|mut v| {
        v.sort_by_key(|e| e.fill_date);
        v
    })
}

/// Day-by-day expansion of coverage: the MME-derived features by brute force.
fn expanded(events: &[PrescriptionEvent], week: u32) -> [f64; 7] {
    let end = week_end_day(week);
    let start = end - LOOKBACK_DAYS + 1;
    let (mut covered, mut total, mut max, mut ob, mut oo, mut recent, mut prior) = (0u32, 0.0, 0.0f64, 0u32, 0u32, 0.0, 0.0);
    for d in start..=end {
        let on: Vec<&PrescriptionEvent> = events
            .iter()
            .filter(|e| e.fill_date <= d && d < e.fill_date + e.days_supply && e.fill_date <= end)
            .collect();
        let opioids: Vec<_> = on.iter().filter(|e| e.drug_class == DrugClass::Opioid).collect();
        let benzo = on.iter().any(|e| e.drug_class == DrugClass::Benzodiazepine);
        if opioids.is_empty() {
            continue;
        }
        let mme: f64 = opioids.iter().map(|e| e.mme_per_day).sum();
        covered += 1;
        total += mme;
        max = max.max(mme);
        ob += u32::from(benzo);
        oo += u32::from(opioids.len() >= 2);
        if d > end - 30 {
            recent += mme;
        } else if d > end - 60 {
            prior += mme;
        }
    }
    let mean = if covered > 0 { total / f64::from(covered) } else { 0.0 };
    [mean, max, total, f64::from(ob), f64::from(oo), recent - prior, f64::from(covered)]
}

fn features(events: &[PrescriptionEvent], week: u32) -> Option<[f64; N_FEATURES]> {
    patient_level_features(&patient(), events, week).unwrap().map(|l| l.x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn sweep_matches_day_expansion(events in arb_events(60), week in 0u32..26) {
        if let Some(x) = features(&events, week) {
            let o = expanded(&events, week);
            prop_assert_eq!(x[4], o[0]);
            prop_assert_eq!(x[5], o[1]);
            prop_assert_eq!(x[6], o[2]);
            prop_assert_eq!(x[9], o[3]);
            prop_assert_eq!(x[10], o[4]);
            prop_assert_eq!(x[13], o[5]);
        }
    }

    #[test]
    fn shifting_time_by_whole_weeks_changes_nothing(events in arb_events(40), week in 0u32..20, k in 1u32..6) {
        let shifted: Vec<PrescriptionEvent> = events
            .iter()
            .cloned()
            .map(|mut e| { e.fill_date += 7 * k as i32; e })
            .collect();
        prop_assert_eq!(features(&events, week), features(&shifted, week + k));
    }

    #[test]
    fn other_class_fills_leave_opioid_features_alone(
        events in arb_events(40),
        extra in prop::collection::vec((-320i32..200, 1i32..=90), 1..10),
        week in 0u32..26,
    ) {
        let mut more = events.clone();
        more.extend(extra.iter().map(|&(d, s)| event(d, DrugClass::Other, 0.0, s, 9, 9, true, false)));
        more.sort_by_key(|e| e.fill_date);
        if let (Some(a), Some(b)) = (features(&events, week), features(&more, week)) {
            for i in [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 13, 15, 16] {
                prop_assert_eq!(a[i], b[i], "feature {}", i);
            }
            prop_assert!(b[12] <= a[12]);
            prop_assert!(b[14] >= a[14]);
        }
    }

    #[test]
    fn counts_and_ranges(events in arb_events(60), week in 0u32..26) {
        if let Some(x) = features(&events, week) {
            prop_assert!(x.iter().all(|v| v.is_finite()));
            prop_assert!((0.0..=1.0).contains(&x[11]));
            prop_assert!(x[2] <= x[0] && x[3] <= x[0] && x[8] <= x[0]);
            prop_assert!(x[9] <= LOOKBACK_DAYS as f64 && x[10] <= LOOKBACK_DAYS as f64);
            prop_assert!((0.0..LOOKBACK_DAYS as f64).contains(&x[12]));
            prop_assert!(x[5] >= x[4]);
        }
    }
}

#[test]
fn thousand_event_fixture_matches_expansion() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let mut events: Vec<PrescriptionEvent> = (0..1000)
        .map(|_| {
            let class = match rng.random_range(0..5) {
                0 => DrugClass::Benzodiazepine,
                1 => DrugClass::Other,
                _ => DrugClass::Opioid,
            };
            event(
                rng.random_range(-300..190),
                class,
                f64::from(rng.random_range(1..800)) / 4.0,
                rng.random_range(1..=90),
                rng.random_range(0..8),
                rng.random_range(0..8),
                rng.random_bool(0.2),
                rng.random_bool(0.2),
            )
        })
        .collect();
    events.sort_by_key(|e| e.fill_date);
    for week in [0, 7, 13, 25] {
        let x = features(&events, week).expect("active");
        let o = expanded(&events, week);
        assert_eq!([x[4], x[5], x[6], x[9], x[10], x[13]], [o[0], o[1], o[2], o[3], o[4], o[5]]);
    }
}
