//! Prints validation AUROC and the death rate per score-percentile bin for a
//! synthetic cohort, next to the AUROC of the generator's own hazard.
//!
//! `cargo run --release -p regionrisk --example validation_curve -- [patients] [seed] [base_rate] [trees]`

use std::collections::HashMap;
use std::time::Instant;

use regionrisk::cohort::{generate_cohort, CohortConfig, CohortTables};
use regionrisk::features::build_feature_table;
use regionrisk::geography::synth_grid_geography;
use regionrisk::metrics::auroc;
use regionrisk::model::TrainParams;
use regionrisk::training::{fit_and_validate, is_validation, outcome_label};

fn main() -> regionrisk::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize| args.get(i).map(String::as_str);
    let n: usize = arg(1).and_then(|s| s.parse().ok()).unwrap_or(50_000);
    let seed: u64 = arg(2).and_then(|s| s.parse().ok()).unwrap_or(7);
    let base_death_rate: f64 = arg(3).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let n_trees: usize = arg(4).and_then(|s| s.parse().ok()).unwrap_or(100);

    let t0 = Instant::now();
    let geo = synth_grid_geography(4, 4, 2, seed)?;
    let config = CohortConfig {
        n_patients: n,
        base_death_rate,
        ..Default::default()
    };
    let cohort = generate_cohort(&geo, &config, seed)?;

    // generator hazard at the end of each validation week
    let index: HashMap<&str, usize> = cohort
        .patients
        .iter()
        .enumerate()
        .map(|(i, p)| (p.patient_id.as_str(), i))
        .collect();
    let grouped = cohort.events_by_patient();
    let deaths: HashMap<&str, Option<i32>> = cohort
        .outcomes
        .iter()
        .map(|o| (o.patient_id.as_str(), o.death_day))
        .collect();
    let tables = CohortTables::from(cohort.clone());
    let features = build_feature_table(&tables, config.weeks)?;
    let (mut truth, mut labels) = (Vec::new(), Vec::new());
    for r in features.rows.iter().filter(|r| is_validation(&r.patient_id)) {
        let i = index[r.patient_id.as_str()];
        truth.push(cohort.planted_hazard(i, grouped[i], r.week + 1));
        labels.push(outcome_label(deaths[r.patient_id.as_str()], r.week));
    }
    println!(
        "cohort + features {:.1?}: {} rows, {} deaths",
        t0.elapsed(),
        features.rows.len(),
        deaths.values().flatten().count()
    );
    println!("generator hazard auroc {:.4}", auroc(&truth, &labels)?);

    let params = TrainParams {
        n_trees,
        ..Default::default()
    };
    let (_, report) = fit_and_validate(&features, &tables.outcomes, &params, 1)?;
    println!("total {:.1?}", t0.elapsed());
    println!(
        "train {} rows ({} pos), validation {} rows ({} pos)",
        report.train_rows, report.train_positives, report.validation_rows, report.validation_positives
    );
    println!("auroc {:.4}  bin spearman {:.4}", report.auroc, report.bin_spearman);
    for (b, r) in report.rate_by_bin.iter().enumerate() {
        println!("bin {b:2}: {r:.5}");
    }
    Ok(())
}
