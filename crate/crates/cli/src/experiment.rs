//! The full sweep: train the baseline, train per-epsilon robust models,
//! craft attacks and evaluate both families under metered spans, then score
//! and persist every artifact.
//!
//! Stages run sequentially so span energy attribution stays unambiguous.
//! Any stage failure writes a partial manifest marked failed before the
//! error propagates.

use crate::config::{RobustSweep, RunConfig};
use crate::manifest::{DataProvenance, ManifestRctiRow, ModelArtifact, RunManifest};
use crate::stats::{
    figure_rows, rcti_rows_from_stats, write_figure_csv, write_rcti_csv, write_spans_csv,
    write_stats_csv, ModelFamily, RctiRow, StatsRow,
};
use anyhow::{anyhow, Context, Result};
use rcti_core::attacks::{craft_adversarial_testset, AttackKind, AttackSpec};
use rcti_core::dataset::{batches, load_idx, subset, LabeledDataset};
use rcti_core::energy::{EnergyMeter, EnergyReport};
use rcti_core::nn::{evaluate_accuracy, save_model, NetworkModel};
use rcti_core::rcti::CarbonBasis;
use rcti_core::rng::stream_seed;
use rcti_core::training::{adversarial_train, train_baseline, TrainConfig};
use std::path::PathBuf;
use std::time::Duration;

// Substream ids for harness-level seeding.
const STREAM_TRAIN_SUBSET: u64 = 100;
const STREAM_TEST_SUBSET: u64 = 101;
const STREAM_ROBUST_BASE: u64 = 1000;

/// Everything a finished (or failed) experiment leaves behind.
pub struct ExperimentOutput {
    pub out_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub stats_rows: Vec<StatsRow>,
    pub rcti_rows: Vec<RctiRow>,
    pub manifest: RunManifest,
}

/// Error wrapper that names the failed pipeline stage.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct StageError {
    pub stage: String,
    #[source]
    pub source: anyhow::Error,
}

fn fmt_eps(eps: f64) -> String {
    format!("{eps}")
}

/// Training configuration for one model of the sweep.
fn train_cfg(cfg: &RunConfig, seed: u64, adversarial_ratio: f64) -> TrainConfig {
    TrainConfig {
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        learning_rate: cfg.train.learning_rate,
        adversarial_ratio,
        seed,
        architecture: cfg.architecture,
    }
}

/// Attack used while training a robust model at `eps`.
pub fn training_attack(cfg: &RunConfig, eps: f64) -> AttackSpec {
    match cfg.attack.kind {
        AttackKind::FastGradient => AttackSpec::fast_gradient(eps),
        AttackKind::Pgd => AttackSpec::pgd(
            eps,
            pgd_step_size(cfg, eps),
            cfg.attack.steps,
            cfg.attack.random_start,
        ),
    }
}

/// Attack used to craft evaluation test sets at `eps`; never randomized so
/// reported accuracies are deterministic.
pub fn evaluation_attack(cfg: &RunConfig, eps: f64) -> AttackSpec {
    match cfg.attack.kind {
        AttackKind::FastGradient => AttackSpec::fast_gradient(eps),
        AttackKind::Pgd => AttackSpec::pgd(eps, pgd_step_size(cfg, eps), cfg.attack.steps, false),
    }
}

fn pgd_step_size(cfg: &RunConfig, eps: f64) -> f64 {
    match cfg.attack.step_size {
        Some(s) => s,
        // eps/4 by convention; at eps == 0 every step clamps to zero anyway
        // and the value only has to be positive to form a valid spec.
        None if eps > 0.0 => eps / 4.0,
        None => 0.01,
    }
}

pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

/// Loads the IDX pairs and applies the seeded subsets.
pub fn load_data(cfg: &RunConfig) -> Result<PreparedData> {
    let train = load_idx(&cfg.data.train_images, &cfg.data.train_labels)?;
    let test = load_idx(&cfg.data.test_images, &cfg.data.test_labels)?;
    let train = match cfg.train.train_subset {
        Some(n) => subset(&train, n, stream_seed(cfg.seed, STREAM_TRAIN_SUBSET))?,
        None => train,
    };
    let test = match cfg.train.test_subset {
        Some(n) => subset(&test, n, stream_seed(cfg.seed, STREAM_TEST_SUBSET))?,
        None => test,
    };
    Ok(PreparedData { train, test })
}

struct SweepModel {
    /// Epsilon the model was trained against (None for the baseline).
    trained_eps: Option<f64>,
    model: NetworkModel,
    train_report: EnergyReport,
}

/// Runs the whole pipeline. On failure the partial manifest is written with
/// `status: failed` and the failed stage name.
pub fn cmd_experiment(cfg: &RunConfig) -> Result<ExperimentOutput, StageError> {
    let mut manifest = RunManifest::new(cfg.clone());
    let out_dir = cfg.output_dir.clone();
    let manifest_path = out_dir.join("manifest.json");

    let result = run_stages(cfg, &out_dir, &mut manifest);
    match result {
        Ok((stats_rows, rcti_rows)) => {
            manifest.status = "ok".into();
            manifest.finished = Some(chrono::Utc::now().to_rfc3339());
            if let Err(err) = manifest.write(&manifest_path) {
                return Err(StageError {
                    stage: "write-outputs".into(),
                    source: err,
                });
            }
            Ok(ExperimentOutput {
                out_dir,
                manifest_path,
                stats_rows,
                rcti_rows,
                manifest,
            })
        }
        Err(err) => {
            manifest.status = "failed".into();
            manifest.failed_stage = Some(err.stage.clone());
            manifest.finished = Some(chrono::Utc::now().to_rfc3339());
            // Partial manifests must not reference artifacts that were never
            // written; references are only added after their files exist, so
            // this write can only fail on io problems.
            let _ = std::fs::create_dir_all(&out_dir);
            let _ = manifest.write(&manifest_path);
            Err(err)
        }
    }
}

fn stage<T>(name: &str, result: Result<T>) -> Result<T, StageError> {
    result.map_err(|source| StageError {
        stage: name.to_string(),
        source,
    })
}

#[allow(clippy::type_complexity)]
fn run_stages(
    cfg: &RunConfig,
    out_dir: &PathBuf,
    manifest: &mut RunManifest,
) -> Result<(Vec<StatsRow>, Vec<RctiRow>), StageError> {
    let models_dir = out_dir.join("models");
    let figures_dir = out_dir.join("figures");
    stage(
        "prepare-output",
        std::fs::create_dir_all(&models_dir)
            .and_then(|_| std::fs::create_dir_all(&figures_dir))
            .context("creating output directories"),
    )?;

    let mut meter = stage(
        "prepare-output",
        EnergyMeter::new(cfg.hardware).context("building energy meter"),
    )?;
    meter.set_sampling_interval(Duration::from_millis(cfg.sampling_interval_ms));

    // Stage: load-data
    let data = stage("load-data", load_data(cfg).context("loading IDX data"))?;
    manifest.data = Some(DataProvenance {
        train: data.train.provenance.clone(),
        test: data.test.provenance.clone(),
        train_len: data.train.len(),
        test_len: data.test.len(),
    });
    println!(
        "loaded {} training and {} test samples",
        data.train.len(),
        data.test.len()
    );

    // Stage: train-baseline
    let baseline = stage("train-baseline", {
        (|| -> Result<SweepModel> {
            let span = meter.start_span("baseline/train")?;
            let model = train_baseline(&data.train, &train_cfg(cfg, cfg.seed, 0.0))?;
            let report = span.stop();
            println!("trained baseline in {:.2}s", report.duration_s);
            let path = models_dir.join("baseline.bin");
            save_model(&path, &model, cfg.architecture.name())?;
            manifest.spans.push(report.clone());
            manifest.models.push(ModelArtifact {
                name: "baseline".into(),
                epsilon: None,
                path,
            });
            Ok(SweepModel {
                trained_eps: None,
                model,
                train_report: report,
            })
        })()
    })?;

    // Stage: train-robust (one model per positive grid epsilon, or a single
    // fixed model swept across the grid).
    let robust_epsilons: Vec<f64> = match cfg.robust_sweep {
        RobustSweep::PerEpsilon => cfg
            .attack
            .epsilon_grid
            .iter()
            .copied()
            .filter(|&e| e > 0.0)
            .collect(),
        RobustSweep::Fixed(eps) => vec![eps],
    };
    let mut robust_models = Vec::new();
    for (i, &eps) in robust_epsilons.iter().enumerate() {
        let stage_name = format!("train-robust-eps{}", fmt_eps(eps));
        let sweep_model = stage(&stage_name, {
            (|| -> Result<SweepModel> {
                let label = format!("robust_eps{}/train", fmt_eps(eps));
                let span = meter.start_span(&label)?;
                let seed = stream_seed(cfg.seed, STREAM_ROBUST_BASE + i as u64);
                let tcfg = train_cfg(cfg, seed, cfg.train.adversarial_ratio);
                let model = adversarial_train(&data.train, &tcfg, &training_attack(cfg, eps))?;
                let report = span.stop();
                println!("trained robust eps={eps} in {:.2}s", report.duration_s);
                let path = models_dir.join(format!("robust_eps{}.bin", fmt_eps(eps)));
                save_model(&path, &model, cfg.architecture.name())?;
                manifest.spans.push(report.clone());
                manifest.models.push(ModelArtifact {
                    name: format!("robust_eps{}", fmt_eps(eps)),
                    epsilon: Some(eps),
                    path,
                });
                Ok(SweepModel {
                    trained_eps: Some(eps),
                    model,
                    train_report: report,
                })
            })()
        })?;
        robust_models.push(sweep_model);
    }

    // Stage: evaluate. Baseline rows cover the whole grid. Robust rows: one
    // per grid epsilon; the row at a positive epsilon uses the model trained
    // at that epsilon (or the fixed model), the epsilon-zero row reports the
    // first robust model on clean data.
    let mut stats_rows = Vec::new();
    let span_policy = if cfg.include_training_energy {
        "train+attack_gen+eval"
    } else {
        "attack_gen+eval"
    };
    let attack_name = cfg.attack.kind.name().to_string();

    let evaluate_row = |family: ModelFamily,
                            sweep_model: &SweepModel,
                            eps: f64,
                            meter: &EnergyMeter,
                            manifest: &mut RunManifest|
     -> Result<StatsRow> {
        let tag = match family {
            ModelFamily::Baseline => "baseline".to_string(),
            ModelFamily::Robust => "robust".to_string(),
        };
        let gen_label = format!("{attack_name}/{tag}/eps{}/attack_gen", fmt_eps(eps));
        let spec = evaluation_attack(cfg, eps);
        let span = meter.start_span(&gen_label)?;
        let adv = craft_adversarial_testset(&sweep_model.model, &data.test, &spec, cfg.train.batch_size, 0)?;
        let gen_report = span.stop();

        let eval_label = format!("{attack_name}/{tag}/eps{}/eval", fmt_eps(eps));
        let span = meter.start_span(&eval_label)?;
        let accuracy = evaluate_accuracy(&sweep_model.model, &batches(&adv, cfg.train.batch_size))?;
        let eval_report = span.stop();

        println!(
            "{tag} eps={eps}: accuracy {:.2}% ({:.2}s attack gen, {:.2}s eval)",
            accuracy * 100.0,
            gen_report.duration_s,
            eval_report.duration_s
        );

        let mut row_reports = vec![gen_report, eval_report];
        if cfg.include_training_energy {
            row_reports.push(sweep_model.train_report.clone());
        }
        let row = StatsRow {
            attack: attack_name.clone(),
            model: family,
            epsilon: eps,
            accuracy_pct: accuracy * 100.0,
            cpu_energy_kwh: row_reports.iter().map(|r| r.cpu_energy_kwh).sum(),
            ram_energy_kwh: row_reports.iter().map(|r| r.ram_energy_kwh).sum(),
            total_energy_kwh: row_reports.iter().map(|r| r.total_energy_kwh).sum(),
            duration_s: row_reports.iter().map(|r| r.duration_s).sum(),
            emissions_g: row_reports.iter().map(|r| r.emissions_g).sum(),
            spans: span_policy.to_string(),
        };
        for report in &row_reports[..row_reports.len() - usize::from(cfg.include_training_energy)] {
            manifest.spans.push(report.clone());
        }
        Ok(row)
    };

    for &eps in &cfg.attack.epsilon_grid {
        let row = stage(
            &format!("attack-eval-baseline-eps{}", fmt_eps(eps)),
            evaluate_row(ModelFamily::Baseline, &baseline, eps, &meter, manifest),
        )?;
        stats_rows.push(row);
    }
    for &eps in &cfg.attack.epsilon_grid {
        let sweep_model = match cfg.robust_sweep {
            RobustSweep::Fixed(_) => robust_models.first(),
            RobustSweep::PerEpsilon => {
                if eps > 0.0 {
                    robust_models
                        .iter()
                        .find(|m| m.trained_eps == Some(eps))
                } else {
                    // Clean-data row for the robust family: the first robust
                    // model evaluated without perturbation.
                    robust_models.first()
                }
            }
        };
        let Some(sweep_model) = sweep_model else {
            // Degenerate grid {0}: no robust family at all.
            continue;
        };
        let row = stage(
            &format!("attack-eval-robust-eps{}", fmt_eps(eps)),
            evaluate_row(ModelFamily::Robust, sweep_model, eps, &meter, manifest),
        )?;
        stats_rows.push(row);
    }

    // Stage: write-outputs
    let rcti_rows = stage("write-outputs", {
        (|| -> Result<Vec<RctiRow>> {
            let stats_path = out_dir.join("stats.csv");
            write_stats_csv(&stats_path, &stats_rows)?;
            manifest.outputs.stats_csv = Some(stats_path);

            let spans_path = out_dir.join("spans.csv");
            write_spans_csv(&spans_path, &manifest.spans)?;
            manifest.outputs.spans_csv = Some(spans_path);

            let rcti_rows = if stats_rows.iter().any(|r| r.model == ModelFamily::Robust) {
                rcti_rows_from_stats(&stats_rows, CarbonBasis::TotalEnergyKwh, &cfg.rcti)?
            } else {
                Vec::new()
            };
            let rcti_path = out_dir.join("rcti.csv");
            write_rcti_csv(&rcti_path, &rcti_rows)?;
            manifest.outputs.rcti_csv = Some(rcti_path);
            manifest.rcti = rcti_rows.iter().map(ManifestRctiRow::from).collect();

            let (dr, dc, rc) = figure_rows(&rcti_rows);
            for (name, rows) in [("delta_r", dr), ("delta_c", dc), ("rcti", rc)] {
                let path = figures_dir.join(format!("{name}.csv"));
                write_figure_csv(&path, &rows)?;
                manifest.outputs.figures.push(path);
            }
            Ok(rcti_rows)
        })()
    })?;

    Ok((stats_rows, rcti_rows))
}

/// Trains and saves just the baseline model.
pub fn cmd_train_baseline(cfg: &RunConfig, out: Option<PathBuf>) -> Result<PathBuf> {
    let data = load_data(cfg)?;
    let model = train_baseline(&data.train, &train_cfg(cfg, cfg.seed, 0.0))?;
    let accuracy = evaluate_accuracy(&model, &batches(&data.test, cfg.train.batch_size))?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join("models").join("baseline.bin"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_model(&path, &model, cfg.architecture.name())?;
    println!(
        "baseline model: clean accuracy {:.2}%, saved to {}",
        accuracy * 100.0,
        path.display()
    );
    Ok(path)
}

/// Trains and saves one robust model at the given epsilon.
pub fn cmd_train_robust(cfg: &RunConfig, eps: f64, out: Option<PathBuf>) -> Result<PathBuf> {
    anyhow::ensure!(eps > 0.0, "robust training needs epsilon > 0");
    let data = load_data(cfg)?;
    let tcfg = train_cfg(
        cfg,
        stream_seed(cfg.seed, STREAM_ROBUST_BASE),
        cfg.train.adversarial_ratio,
    );
    let model = adversarial_train(&data.train, &tcfg, &training_attack(cfg, eps))?;
    let accuracy = evaluate_accuracy(&model, &batches(&data.test, cfg.train.batch_size))?;
    let path =
        out.unwrap_or_else(|| cfg.output_dir.join("models").join(format!("robust_eps{eps}.bin")));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_model(&path, &model, cfg.architecture.name())?;
    println!(
        "robust model (eps={eps}): clean accuracy {:.2}%, saved to {}",
        accuracy * 100.0,
        path.display()
    );
    Ok(path)
}

/// Crafts an adversarial test set against a saved model and reports the
/// accuracy under attack.
pub fn cmd_attack_eval(cfg: &RunConfig, model_path: &PathBuf, eps: f64) -> Result<f64> {
    let (model, arch) = rcti_core::nn::load_model(model_path)?;
    let data = load_data(cfg)?;
    let spec = evaluation_attack(cfg, eps);
    let adv = craft_adversarial_testset(&model, &data.test, &spec, cfg.train.batch_size, 0)?;
    let accuracy = evaluate_accuracy(&model, &batches(&adv, cfg.train.batch_size))?;
    println!(
        "model {} ({arch}): accuracy {:.2}% under {} at eps={eps}",
        model_path.display(),
        accuracy * 100.0,
        cfg.attack.kind.name()
    );
    Ok(accuracy)
}

/// Re-scores a stats CSV without retraining.
pub fn cmd_rcti(
    stats_path: &PathBuf,
    out_path: &PathBuf,
    basis: CarbonBasis,
    thresholds: &rcti_core::rcti::RctiThresholds,
) -> Result<Vec<RctiRow>> {
    let rows = crate::stats::read_stats_csv(stats_path)?;
    let scored = rcti_rows_from_stats(&rows, basis, thresholds)?;
    if scored.is_empty() {
        return Err(anyhow!("stats file {} has no robust rows to score", stats_path.display()));
    }
    if let Some(parent) = out_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    write_rcti_csv(out_path, &scored)?;
    println!("wrote {} scored rows to {}", scored.len(), out_path.display());
    Ok(scored)
}

/// Expands a scored table into the three plot-ready figure files.
pub fn cmd_figure_data(rcti_path: &PathBuf, out_dir: &PathBuf) -> Result<Vec<PathBuf>> {
    let rows = crate::stats::read_rcti_csv(rcti_path)?;
    std::fs::create_dir_all(out_dir)?;
    let (dr, dc, rc) = figure_rows(&rows);
    let mut written = Vec::new();
    for (name, rows) in [("delta_r", dr), ("delta_c", dc), ("rcti", rc)] {
        let path = out_dir.join(format!("{name}.csv"));
        write_figure_csv(&path, &rows)?;
        written.push(path);
    }
    println!("wrote figure data to {}", out_dir.display());
    Ok(written)
}
