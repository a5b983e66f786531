use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use regionrisk::geography::Level;
use regionrisk_cli::{config::PipelineConfig, ExportFormat, Work};
use serde_json::{json, Value};

/// Synthetic cohort to regional risk map, one stage at a time.
#[derive(Debug, Parser)]
#[command(name = "regionrisk", version)]
struct Cli {
    /// Print diagnostics as one JSON object on stderr.
    #[arg(long, global = true)]
    json: bool,

    /// Work directory shared by all stages.
    #[arg(long, global = true, default_value = "work")]
    work: PathBuf,

    /// TOML config; defaults to <work>/config.toml once `synth` has run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for geography, cohort and training; overrides the config
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CohortFlags {
    #[arg(long)]
    patients: Option<usize>,
    #[arg(long)]
    weeks: Option<u32>,
    #[arg(long)]
    base_death_rate: Option<f64>,
    /// Use this GeoJSON instead of a synthetic grid.
    #[arg(long)]
    geography: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainFlags {
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    week_stride: Option<u32>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Geography and synthetic patients, fills and outcomes.
    Synth(CohortFlags),
    /// Weekly feature table.
    Features,
    /// Fit the boosted trees and report validation.
    Train(TrainFlags),
    /// Scores and attributions for every patient-week.
    Score,
    /// Build the aggregate store.
    Aggregate,
    /// Every stage from synth to aggregate.
    Run {
        #[command(flatten)]
        cohort: CohortFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Serve the JSON API.
    Serve {
        /// Defaults to <work>/store.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: IpAddr,
        /// Allowed dashboard origin; repeatable. Any origin when omitted.
        #[arg(long = "cors-origin")]
        cors_origins: Vec<String>,
    },
    /// Dump one map layer.
    Export {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        week: u32,
        #[arg(long, default_value = "zcta")]
        level: Level,
        #[arg(long, value_enum, default_value = "csv")]
        format: ExportFormat,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cli {
    fn pipeline_config(&self, work: &Work) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::read(p)?,
            None => work.config()?,
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        Ok(c)
    }
}

fn apply_cohort(c: &mut PipelineConfig, f: &CohortFlags) {
    if let Some(v) = f.patients {
        c.cohort.n_patients = v;
    }
    if let Some(v) = f.weeks {
        c.cohort.weeks = v;
    }
    if let Some(v) = f.base_death_rate {
        c.cohort.base_death_rate = v;
    }
}

fn apply_train(c: &mut PipelineConfig, f: &TrainFlags) {
    if let Some(v) = f.trees {
        c.train.n_trees = v;
    }
    if let Some(v) = f.max_depth {
        c.train.max_depth = v;
    }
    if let Some(v) = f.learning_rate {
        c.train.learning_rate = v;
    }
    if let Some(v) = f.week_stride {
        c.train.week_stride = v;
    }
}

fn run(cli: &Cli) -> Result<Value> {
    let work = Work::new(&cli.work);
    let mut config = cli.pipeline_config(&work)?;
    match &cli.command {
        Command::Synth(f) => {
            apply_cohort(&mut config, f);
            regionrisk_cli::synth(&work, &config, f.geography.as_deref())
        }
        Command::Features => regionrisk_cli::features(&work, &config),
        Command::Train(f) => {
            apply_train(&mut config, f);
            regionrisk_cli::train(&work, &config)
        }
        Command::Score => regionrisk_cli::score(&work),
        Command::Aggregate => regionrisk_cli::aggregate(&work, &config),
        Command::Run { cohort, train } => {
            apply_cohort(&mut config, cohort);
            apply_train(&mut config, train);
            if let Some(g) = &cohort.geography {
                regionrisk_cli::synth(&work, &config, Some(g))?;
            }
            regionrisk_cli::run_all(&work, &config)
        }
        Command::Serve {
            store,
            port,
            host,
            cors_origins,
        } => {
            let dir = store.clone().unwrap_or_else(|| work.store());
            let state = regionrisk_service::AppState::from_dir(&dir);
            let addr = SocketAddr::new(*host, *port);
            tokio::runtime::Runtime::new()
                .context("starting runtime")?
                .block_on(regionrisk_service::serve(addr, state, cors_origins))
                .with_context(|| format!("serving on {addr}"))?;
            Ok(json!({ "stopped": addr.to_string() }))
        }
        Command::Export {
            store,
            metric,
            week,
            level,
            format,
            out,
        } => {
            let dir = store.clone().unwrap_or_else(|| work.store());
            match out {
                Some(p) => {
                    let mut f = std::fs::File::create(p).with_context(|| format!("creating {}", p.display()))?;
                    regionrisk_cli::export(&dir, *level, metric, *week, *format, &mut f)
                }
                None => regionrisk_cli::export(&dir, *level, metric, *week, *format, &mut std::io::stdout().lock()),
            }
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth(_) => "synth",
        Command::Features => "features",
        Command::Train(_) => "train",
        Command::Score => "score",
        Command::Aggregate => "aggregate",
        Command::Run { .. } => "run",
        Command::Serve { .. } => "serve",
        Command::Export { .. } => "export",
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let c = cause.to_string();
        if !text.contains(&c) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&c);
        }
    }
    text
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let name = command_name(&cli.command);
    match run(&cli) {
        Ok(summary) => {
            if cli.json {
                eprintln!("{}", json!({ "command": name, "ok": true, "result": summary }));
            } else {
                eprintln!("{name}: {}", serde_json::to_string_pretty(&summary).unwrap_or_default());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                eprintln!("{}", json!({ "command": name, "ok": false, "error": describe(&e) }));
            } else {
                eprintln!("error: {}", describe(&e));
            }
            ExitCode::FAILURE
        }
    }
}
