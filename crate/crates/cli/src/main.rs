//! Command-line experiment runner: train, attack, meter, score.

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use rcti_cli::config::{parse_config, RunConfig, CONFIG_REFERENCE};
use rcti_cli::experiment;
use rcti_core::rcti::{CarbonBasis, RctiThresholds};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "rcti",
    version,
    about = "Benchmark the trade-off between adversarial robustness and carbon emissions",
    after_long_help = CONFIG_REFERENCE
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Path to the run config file.
    #[arg(long)]
    config: PathBuf,
    /// Config overrides as key=value (repeatable); see --help for keys.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for run.output_dir.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Shorthand for run.seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = parse_config(&self.config, &self.overrides)?;
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the full sweep: train, attack, meter, and score every grid point.
    Experiment {
        #[command(flatten)]
        config: ConfigArgs,
        /// Add training spans to each row's metered energy
        /// (run.include_training_energy).
        #[arg(long)]
        include_training_energy: bool,
    },
    /// Re-score a stats CSV into a trade-off table without retraining.
    Rcti {
        /// Input stats CSV (as produced by `experiment`).
        #[arg(long)]
        stats: PathBuf,
        /// Output path for the scored table.
        #[arg(long, default_value = "rcti.csv")]
        out: PathBuf,
        /// Carbon basis: energy | emissions.
        #[arg(long, default_value = "energy")]
        basis: String,
        /// Finite Eco-Critical cutoff.
        #[arg(long, default_value_t = 100.0)]
        critical_threshold: f64,
        /// Equality tolerance for the Eco-Neutral and Eco-Ideal bands.
        #[arg(long, default_value_t = 1e-6)]
        equality_tolerance: f64,
    },
    /// Expand a scored table into plot-ready per-figure CSV files.
    FigureData {
        /// Input trade-off CSV (as produced by `rcti`).
        #[arg(long)]
        rcti: PathBuf,
        /// Directory for the figure CSVs.
        #[arg(long, default_value = "figures")]
        out_dir: PathBuf,
    },
    /// Train and save only the baseline model.
    TrainBaseline {
        #[command(flatten)]
        config: ConfigArgs,
        /// Model file path (default: <output_dir>/models/baseline.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and save one adversarially trained model.
    TrainRobust {
        #[command(flatten)]
        config: ConfigArgs,
        /// Attack strength to train against (falls back to attack.epsilon).
        #[arg(long)]
        epsilon: Option<f64>,
        /// Model file path (default: <output_dir>/models/robust_eps<e>.bin).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack a saved model and report its accuracy under the attack.
    AttackEval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Saved model file to attack.
        #[arg(long)]
        model: PathBuf,
        /// Attack strength (falls back to attack.epsilon).
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

fn need_epsilon(flag: Option<f64>, cfg: &RunConfig) -> Result<f64> {
    flag.or(cfg.attack.epsilon).ok_or_else(|| {
        anyhow::anyhow!("no epsilon given: pass --epsilon or set attack.epsilon in the config")
    })
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Experiment {
            config,
            include_training_energy,
        } => {
            let mut cfg = config.load()?;
            if include_training_energy {
                cfg.include_training_energy = true;
            }
            let output = experiment::cmd_experiment(&cfg)?;
            println!(
                "experiment complete: {} stats rows, {} scored rows, manifest {}",
                output.stats_rows.len(),
                output.rcti_rows.len(),
                output.manifest_path.display()
            );
            Ok(())
        }
        Cmd::Rcti {
            stats,
            out,
            basis,
            critical_threshold,
            equality_tolerance,
        } => {
            let basis = CarbonBasis::parse(&basis)
                .ok_or_else(|| anyhow::anyhow!("basis must be `energy` or `emissions`"))?;
            let thresholds = RctiThresholds {
                critical: critical_threshold,
                equality_tol: equality_tolerance,
            };
            experiment::cmd_rcti(&stats, &out, basis, &thresholds)?;
            Ok(())
        }
        Cmd::FigureData { rcti, out_dir } => {
            experiment::cmd_figure_data(&rcti, &out_dir)?;
            Ok(())
        }
        Cmd::TrainBaseline { config, out } => {
            let cfg = config.load()?;
            experiment::cmd_train_baseline(&cfg, out)?;
            Ok(())
        }
        Cmd::TrainRobust {
            config,
            epsilon,
            out,
        } => {
            let cfg = config.load()?;
            let eps = need_epsilon(epsilon, &cfg)?;
            experiment::cmd_train_robust(&cfg, eps, out)?;
            Ok(())
        }
        Cmd::AttackEval {
            config,
            model,
            epsilon,
        } => {
            let cfg = config.load()?;
            let eps = need_epsilon(epsilon, &cfg)?;
            experiment::cmd_attack_eval(&cfg, &model, eps)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
