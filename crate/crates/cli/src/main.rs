use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use fedistill::harness::{
    self, AnalyticSpec, DrlSpec, ExperimentConfig, ExperimentScheme, DEFAULT_THRESHOLDS,
};
use fedistill::Error;

/// Output-exchange distributed learning experiments.
#[derive(Parser)]
#[command(name = "fedistill", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overridden by FEDISTILL_OUT_DIR).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Co-distillation residual curves in the kernel regime.
    AnalyzeNtk {
        #[arg(long, default_value_t = 1.0)]
        a: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Number of workers.
        #[arg(long = "workers", short = 'c', default_value_t = 2)]
        workers: usize,
        /// Samples per output vector.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        r_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distributed reinforcement learning on cart-pole.
    Frd {
        #[arg(long, value_enum, default_value_t = DrlArg::Frd)]
        scheme: DrlArg,
        #[arg(long, short = 'c', default_value_t = 2)]
        agents: usize,
        /// Bins per state dimension.
        #[arg(long, short = 's', default_value_t = 30)]
        subspaces: usize,
        /// Episodes between exchanges.
        #[arg(long, default_value_t = 25)]
        interval: usize,
        /// Episode cap.
        #[arg(long, default_value_t = 500)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-round deltas and cost-at-accuracy ratios between two metrics files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Accuracy thresholds, comma separated.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DrlArg {
    Pd,
    Frd,
    Frl,
}

/// Exit status 1 for bad input, 2 for failures during a run.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_validation() || matches!(e, Error::Schema(_)) { 1 } else { 2 };
        Failure { code, error: e.into() }
    }
}

fn invalid(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn execute(cfg: ExperimentConfig) -> Result<(), Failure> {
    cfg.validate()?;
    let dir = harness::resolve_output_dir(&cfg);
    let summary = harness::run_experiment(&cfg, &dir)?;
    for file in &summary.manifest.outputs {
        println!("{}", summary.out_dir.join(file).display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, out } => {
            let text = fs::read_to_string(&config)
                .with_context(|| format!("reading {}", config.display()))
                .map_err(invalid)?;
            let mut cfg = ExperimentConfig::from_json(&text)?;
            if out.is_some() {
                cfg.output = out;
            }
            execute(cfg)
        }
        Command::AnalyzeNtk { a, lambda, workers, n, r_max, seed, out } => execute(ExperimentConfig {
            scheme: ExperimentScheme::CdAnalytic,
            seed,
            output: out,
            workers,
            dataset: None,
            shards: None,
            model: None,
            training: None,
            channel: None,
            mix: None,
            analytic: Some(AnalyticSpec { a, lambda, workers, n, rounds: r_max }),
            drl: None,
        }),
        Command::Frd { scheme, agents, subspaces, interval, episodes, seed, out } => {
            let scheme = match scheme {
                DrlArg::Pd => ExperimentScheme::Pd,
                DrlArg::Frd => ExperimentScheme::Frd,
                DrlArg::Frl => ExperimentScheme::Frl,
            };
            execute(ExperimentConfig {
                scheme,
                seed,
                output: out,
                workers: agents,
                dataset: None,
                shards: None,
                model: None,
                training: None,
                channel: None,
                mix: None,
                analytic: None,
                drl: Some(DrlSpec {
                    agents,
                    subspaces,
                    exchange_interval: interval,
                    episodes,
                    ..DrlSpec::default()
                }),
            })
        }
        Command::Compare { a, b, thresholds } => {
            let read = |p: &PathBuf| -> Result<_, Failure> {
                let file = fs::File::open(p)
                    .with_context(|| format!("opening {}", p.display()))
                    .map_err(invalid)?;
                harness::read_metrics(file).map_err(|e| Failure {
                    code: 1,
                    error: anyhow!("{}: {e}", p.display()),
                })
            };
            let thresholds = thresholds.unwrap_or_else(|| DEFAULT_THRESHOLDS.to_vec());
            print!("{}", harness::compare(&read(&a)?, &read(&b)?, &thresholds));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
