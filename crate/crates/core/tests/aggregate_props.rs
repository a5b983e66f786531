use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regionrisk::aggregate::{
    aggregate_region_week, aggregate_selection, decompose_values, nearest_rank_90, statewide_decile,
    statewide_series, weekly_thresholds, DecileThreshold, HistogramEdges, Partitions, PatientWeekRecord,
    PatientWeekTable, Rollup, MIN_CELL, MIN_MAP_CELL,
};
use regionrisk::features::N_FEATURES;
use regionrisk::geography::Level;

fn edges() -> HistogramEdges {
    HistogramEdges {
        lo: vec![0.0; N_FEATURES],
        hi: vec![10.0; N_FEATURES],
    }
}

fn records(rng: &mut ChaCha8Rng, n: usize) -> Vec<PatientWeekRecord> {
    (0..n)
        .map(|_| {
            let mut features = [0.0; N_FEATURES];
            let mut phi = [0.0; N_FEATURES];
            for f in 0..N_FEATURES {
                // a few coarse values so bins fill unevenly
                features[f] = f64::from(rng.random_range(0..4u8)) * 2.5 + rng.random_range(0.0..0.5);
                phi[f] = rng.random_range(-1.0..1.0);
            }
            PatientWeekRecord {
                scaled_score: rng.random_range(0.0..200.0),
                features,
                phi,
            }
        })
        .collect()
}

fn thr(t: f64) -> DecileThreshold {
    DecileThreshold { week: 0, threshold: t }
}

/// Random table: members spread over 8 ZCTAs in 2 counties, each active in a
/// random subset of weeks, with continuous (tie-free) scores.
fn random_table(seed: u64, members: u32, weeks: u32) -> PatientWeekTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zctas: Vec<String> = (0..8).map(|i| format!("Z{i}")).collect();
    let counties = vec!["C0".to_string(), "C1".to_string()];
    let mut t = PatientWeekTable::with_regions(zctas, counties);
    for m in 0..members {
        let z = rng.random_range(0..8u32);
        let c = if rng.random_bool(0.05) { 1 - z / 4 } else { z / 4 };
        let p_active = rng.random_range(0.2..1.0);
        for w in 0..weeks {
            if rng.random_bool(p_active) {
                let x: Vec<f64> = (0..N_FEATURES).map(|_| rng.random_range(0.0..10.0)).collect();
                let phi: Vec<f64> = (0..N_FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
                t.push(m, w, z, c, rng.random_range(0.0..500.0), &x, &phi);
            }
        }
    }
    t
}

#[test]
fn suppression_rules_exhaustive() {
    let e = edges();
    for n in 0..=40 {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + n as u64);
            let m = records(&mut rng, n);
            let a = aggregate_region_week("r", Level::Zcta, 0, &m, thr(150.0), &e);
            let hidden = n < MIN_CELL;
            assert_eq!(a.mean_scaled_score.is_none(), hidden);
            assert_eq!(a.top_decile_share.is_none(), hidden);
            assert_eq!(a.mean_phi.is_none(), hidden);
            assert_eq!(a.mean_abs_phi.is_none(), hidden);
            assert_eq!(a.feature_means.is_none(), hidden);
            assert_eq!(a.histograms.is_none(), hidden);
            assert_eq!(a.map_suppressed, n < MIN_MAP_CELL);
            if let Some(h) = &a.histograms {
                for (f, bins) in h.iter().enumerate() {
                    for (b, &bin) in bins.iter().enumerate() {
                        let count = m.iter().filter(|r| e.bin(f, r.features[f]) == b).count();
                        match bin {
                            Some(c) => assert!(c as usize == count && count >= MIN_CELL),
                            None => assert!(count < MIN_CELL),
                        }
                    }
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn adding_patients_never_hides_a_statistic(seed in any::<u64>(), n in 0usize..40, extra in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = records(&mut rng, n + extra);
        let e = edges();
        let a = aggregate_region_week("r", Level::Zcta, 0, &m[..n], thr(100.0), &e);
        let b = aggregate_region_week("r", Level::Zcta, 0, &m, thr(100.0), &e);
        prop_assert!(!a.revealed() || b.revealed());
        prop_assert!(a.map_suppressed || !b.map_suppressed);
        if let (Some(ha), Some(hb)) = (&a.histograms, &b.histograms) {
            for (fa, fb) in ha.iter().zip(hb) {
                for (ca, cb) in fa.iter().zip(fb) {
                    prop_assert!(ca.is_none() || cb.is_some());
                }
            }
        }
    }

    #[test]
    fn statewide_share_matches_nearest_rank(seed in any::<u64>(), n in 10usize..3000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1000.0)).collect();
        let t = statewide_decile(0, &scores).unwrap();
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        // oracle: the ceil(0.9 n)-th smallest, by float arithmetic
        let rank = (0.9 * n as f64 - 1e-9).ceil() as usize;
        prop_assert_eq!(rank, nearest_rank_90(n));
        prop_assert_eq!(t.threshold, sorted[rank - 1]);
        let above = scores.iter().filter(|&&s| t.contains(s)).count();
        prop_assert_eq!(above, n - rank);
        let share = above as f64 / n as f64;
        prop_assert!(share <= 0.1 + 1e-12 && share > 0.1 - 1.0 / n as f64 - 1e-12);
    }

    #[test]
    fn top_decile_share_is_a_rank_statistic(seed in any::<u64>()) {
        let t = random_table(seed, 150, 3);
        let mut u = t.clone();
        for s in &mut u.score {
            *s = (*s / 50.0).exp() * 3.0 + 7.0;
        }
        for level in [Level::Zcta, Level::County] {
            let run = |tab: &PatientWeekTable| {
                let th = weekly_thresholds(tab, 3).unwrap();
                let e = HistogramEdges::from_table(tab).unwrap();
                let p = Partitions::build(tab, level, 3);
                Rollup::build(tab, &p, &th, &e)
                    .cells
                    .iter()
                    .map(|a| a.top_decile_share)
                    .collect::<Vec<_>>()
            };
            prop_assert_eq!(run(&t), run(&u));
        }
    }

    #[test]
    fn county_means_reassemble_the_state_mean(seed in any::<u64>()) {
        let t = random_table(seed, 120, 4);
        let th = weekly_thresholds(&t, 4).unwrap();
        let e = HistogramEdges::from_table(&t).unwrap();
        let p = Partitions::build(&t, Level::County, 4);
        let r = Rollup::build(&t, &p, &th, &e);
        let state = statewide_series(&t, 4, &th, &e);
        for w in 0..4 {
            let mut weighted = 0.0;
            let mut n = 0;
            for c in 0..2 {
                let a = r.get(c, w);
                let mean = a.mean_scaled_score.unwrap_or_else(|| {
                    // suppressed: recompute from members
                    let rows = p.rows(c, w);
                    rows.iter().map(|&i| t.score[i as usize]).sum::<f64>() / rows.len().max(1) as f64
                });
                weighted += a.n_patients as f64 * mean;
                n += a.n_patients;
            }
            prop_assert_eq!(n, state[w as usize].n_patients);
            let s = state[w as usize].mean_scaled_score.unwrap();
            prop_assert!((weighted / n as f64 - s).abs() <= 1e-9);
        }
    }

    #[test]
    fn union_mean_lies_between_part_means(seed in any::<u64>(), pick in prop::collection::vec(0usize..8, 1..6)) {
        let t = random_table(seed, 200, 2);
        let th = weekly_thresholds(&t, 2).unwrap();
        let e = HistogramEdges::from_table(&t).unwrap();
        let p = Partitions::build(&t, Level::Zcta, 2);
        let r = Rollup::build(&t, &p, &th, &e);
        let u = aggregate_selection(&t, &p, &pick, 0..2, &th, &e).unwrap();
        for w in 0..2u32 {
            let parts: Vec<f64> = pick
                .iter()
                .filter_map(|&z| {
                    let rows = p.rows(z, w);
                    (!rows.is_empty()).then(|| rows.iter().map(|&i| t.score[i as usize]).sum::<f64>() / rows.len() as f64)
                })
                .collect();
            if let Some(m) = u[w as usize].mean_scaled_score {
                let lo = parts.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = parts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m >= lo - 1e-9 && m <= hi + 1e-9);
            }
            if pick.iter().all(|&z| z == pick[0]) {
                prop_assert_eq!(&u[w as usize].mean_scaled_score, &r.get(pick[0], w).mean_scaled_score);
            }
        }
    }
}

#[test]
fn statewide_share_on_ten_thousand_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let scores: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() * 1e4).collect();
    let t = statewide_decile(0, &scores).unwrap();
    let share = scores.iter().filter(|&&s| t.contains(s)).count() as f64 / 1e4;
    assert!((0.09..=0.10).contains(&share), "{share}");
}

type Week = Vec<(u32, f64)>;

/// Random fixture: members 0..pool, each present in either week with the
/// given probabilities.
fn fixture(rng: &mut ChaCha8Rng, pool: u32, p_prev: f64, p_cur: f64) -> (Week, Week) {
    let mut prev = Vec::new();
    let mut cur = Vec::new();
    for m in 0..pool {
        if rng.random_bool(p_prev) {
            prev.push((m, rng.random_range(-100.0..100.0)));
        }
        if rng.random_bool(p_cur) {
            cur.push((m, rng.random_range(-100.0..100.0)));
        }
    }
    (prev, cur)
}

#[test]
fn decomposition_identity_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    let mut checked = 0;
    while checked < 10_000 {
        let pool = rng.random_range(1..60);
        let (p_prev, p_cur) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let (prev, cur) = fixture(&mut rng, pool, p_prev, p_cur);
        let Ok(d) = decompose_values("x", 1, &prev, &cur) else {
            assert!(prev.is_empty() || cur.is_empty());
            continue;
        };
        let mean = |v: &[(u32, f64)]| v.iter().map(|p| p.1).sum::<f64>() / v.len() as f64;
        assert!((d.delta_total - (mean(&cur) - mean(&prev))).abs() <= 1e-9);
        let err = (d.delta_existing + d.delta_incoming + d.delta_outgoing - d.delta_total).abs();
        worst = worst.max(err);
        checked += 1;
    }
    assert!(worst <= 1e-9, "worst residual {worst}");
}

#[test]
fn decomposition_edge_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..500 {
        let pool = rng.random_range(1..40u32);
        let vals: Vec<(u32, f64)> = (0..pool).map(|m| (m, rng.random_range(-10.0..10.0))).collect();
        let shifted: Vec<(u32, f64)> = vals.iter().map(|&(m, v)| (m, v + rng.random_range(-1.0..1.0))).collect();
        // no turnover
        let d = decompose_values("x", 3, &vals, &shifted).unwrap();
        assert_eq!((d.delta_incoming, d.delta_outgoing), (0.0, 0.0));
        assert!((d.delta_existing - d.delta_total).abs() <= 1e-12);
        // full turnover
        let fresh: Vec<(u32, f64)> = shifted.iter().map(|&(m, v)| (m + pool, v)).collect();
        let d = decompose_values("x", 3, &vals, &fresh).unwrap();
        assert_eq!((d.delta_existing, d.delta_outgoing), (0.0, 0.0));
        assert!((d.delta_incoming - d.delta_total).abs() <= 1e-12);
        // only arrivals (O empty) and only departures (I empty)
        let mut grown = shifted.clone();
        grown.push((pool, 50.0));
        let d = decompose_values("x", 3, &vals, &grown).unwrap();
        assert_eq!(d.delta_outgoing, 0.0);
        assert!((d.delta_existing + d.delta_incoming - d.delta_total).abs() <= 1e-9);
        if pool > 1 {
            let d = decompose_values("x", 3, &vals, &shifted[1..]).unwrap();
            assert_eq!(d.delta_incoming, 0.0);
            assert!((d.delta_existing + d.delta_outgoing - d.delta_total).abs() <= 1e-9);
        }
    }
}
