//! Run configuration: a line-oriented `key = value` file with dotted
//! sections, strict about unknown keys. Every key can also be supplied on
//! the command line through `--set key=value`.

use rcti_core::attacks::AttackKind;
use rcti_core::energy::HardwareProfile;
use rcti_core::nn::ArchPreset;
use rcti_core::rcti::RctiThresholds;
use serde::Serialize;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("key {key}: cannot parse {value:?} as {expected}")]
    InvalidValue {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("key {key}: {reason}")]
    OutOfRange { key: String, reason: String },
    #[error("missing required key {0}")]
    MissingKey(&'static str),
}

/// How the robust family is built: one model per grid epsilon, or one fixed
/// model swept across the whole grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RobustSweep {
    PerEpsilon,
    Fixed(f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adversarial_ratio: f64,
    /// Seeded subset sizes; `None` uses the whole file.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackParams {
    pub kind: AttackKind,
    pub epsilon_grid: Vec<f64>,
    /// Single-epsilon value for `train-robust` / `attack-eval`.
    pub epsilon: Option<f64>,
    pub steps: usize,
    /// PGD step size; defaults to `epsilon / 4` when unset.
    pub step_size: Option<f64>,
    /// Random start for training-time PGD crafting. Evaluation-time attacks
    /// never use random starts, keeping reported accuracies deterministic.
    pub random_start: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub data: DataPaths,
    pub architecture: ArchPreset,
    pub train: TrainParams,
    pub attack: AttackParams,
    pub hardware: HardwareProfile,
    pub sampling_interval_ms: u64,
    pub rcti: RctiThresholds,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub include_training_energy: bool,
    pub robust_sweep: RobustSweep,
}

/// Key reference printed by `--help`.
pub const CONFIG_REFERENCE: &str = "\
CONFIG FILE KEYS (key = value per line, `#` starts a comment):
  data.train_images / data.train_labels      paths to the training IDX pair (required)
  data.test_images / data.test_labels        paths to the test IDX pair (required)
                                             (`.gz` files are decompressed transparently)
  model.architecture      mlp | cnn-small                        [default: mlp]
  train.epochs            SGD epochs                             [default: 2]
  train.batch_size        minibatch size                         [default: 64]
  train.learning_rate     SGD step size                          [default: 0.1]
  train.adversarial_ratio fraction of each batch replaced by
                          adversarial samples during robust
                          training, in [0, 1]                    [default: 0.5]
  train.train_subset      seeded training subset size, or `all`  [default: 10000]
  train.test_subset       seeded test subset size, or `all`      [default: 2000]
  attack.kind             fg | fgsm | pgd                        [default: fg]
  attack.epsilon_grid     comma-separated ascending values in
                          [0, 0.5]                               [default: 0,0.1,0.2,0.3,0.4,0.5]
  attack.epsilon          single epsilon for train-robust and
                          attack-eval, in [0, 0.5]               [default: unset]
  attack.steps            PGD iteration count                    [default: 10]
  attack.step_size        PGD step size                          [default: epsilon/4]
  attack.random_start     random start for training-time PGD     [default: true]
  hardware.cpu_power_w    CPU package power at full load, watts  [default: 42.5]
  hardware.ram_gb         RAM size for the power model           [default: detected, else 16]
  hardware.ram_w_per_gb   RAM power per GB, watts                [default: 0.375]
  hardware.carbon_intensity_g_per_kwh
                          grid carbon intensity, g CO2 per kWh   [default: 475]
  hardware.sampling_interval_ms
                          utilization sampling period            [default: 100]
  rcti.critical_threshold finite Eco-Critical cutoff             [default: 100]
  rcti.equality_tolerance tolerance for the Eco-Neutral and
                          Eco-Ideal bands                        [default: 1e-6]
  run.output_dir          artifact directory                     [default: rcti_out]
  run.seed                run seed                               [default: 42]
  run.include_training_energy
                          add training spans to each row's
                          metered energy                         [default: false]
  run.robust_sweep        per-epsilon | fixed:<eps>              [default: per-epsilon]
";

/// Accumulates keys before defaulting; `finalize` produces the config.
#[derive(Debug, Default, Clone)]
pub struct ConfigBuilder {
    train_images: Option<PathBuf>,
    train_labels: Option<PathBuf>,
    test_images: Option<PathBuf>,
    test_labels: Option<PathBuf>,
    architecture: Option<ArchPreset>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    adversarial_ratio: Option<f64>,
    train_subset: Option<Option<usize>>,
    test_subset: Option<Option<usize>>,
    attack_kind: Option<AttackKind>,
    epsilon_grid: Option<Vec<f64>>,
    epsilon: Option<f64>,
    steps: Option<usize>,
    step_size: Option<f64>,
    random_start: Option<bool>,
    cpu_power_w: Option<f64>,
    ram_gb: Option<f64>,
    ram_w_per_gb: Option<f64>,
    carbon_intensity: Option<f64>,
    sampling_interval_ms: Option<u64>,
    critical_threshold: Option<f64>,
    equality_tolerance: Option<f64>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    include_training_energy: Option<bool>,
    robust_sweep: Option<RobustSweep>,
}

fn parse_num<T: std::str::FromStr>(
    key: &str,
    value: &str,
    expected: &'static str,
) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        expected,
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(ConfigError::InvalidValue {
            key: key.to_string(),
            value: value.to_string(),
            expected: "boolean",
        }),
    }
}

fn check_epsilon(key: &str, eps: f64) -> Result<f64, ConfigError> {
    if !(0.0..=0.5).contains(&eps) {
        return Err(ConfigError::OutOfRange {
            key: key.to_string(),
            reason: format!("epsilon {eps} outside [0, 0.5]"),
        });
    }
    Ok(eps)
}

impl ConfigBuilder {
    /// Applies one `key = value` assignment; later assignments win.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        match key {
            "data.train_images" => self.train_images = Some(PathBuf::from(value)),
            "data.train_labels" => self.train_labels = Some(PathBuf::from(value)),
            "data.test_images" => self.test_images = Some(PathBuf::from(value)),
            "data.test_labels" => self.test_labels = Some(PathBuf::from(value)),
            "model.architecture" => {
                self.architecture =
                    Some(
                        ArchPreset::parse(value).ok_or_else(|| ConfigError::InvalidValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            expected: "mlp | cnn-small",
                        })?,
                    )
            }
            "train.epochs" => self.epochs = Some(parse_num(key, value, "non-negative integer")?),
            "train.batch_size" => {
                let b: usize = parse_num(key, value, "positive integer")?;
                if b == 0 {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: "batch_size must be at least 1".into(),
                    });
                }
                self.batch_size = Some(b);
            }
            "train.learning_rate" => {
                let lr: f64 = parse_num(key, value, "positive real")?;
                if !(lr > 0.0) {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: format!("learning_rate {lr} must be positive"),
                    });
                }
                self.learning_rate = Some(lr);
            }
            "train.adversarial_ratio" => {
                let r: f64 = parse_num(key, value, "real in [0, 1]")?;
                if !(0.0..=1.0).contains(&r) {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: format!("adversarial_ratio {r} outside [0, 1]"),
                    });
                }
                self.adversarial_ratio = Some(r);
            }
            "train.train_subset" => {
                self.train_subset = Some(if value == "all" {
                    None
                } else {
                    Some(parse_num(key, value, "positive integer or `all`")?)
                })
            }
            "train.test_subset" => {
                self.test_subset = Some(if value == "all" {
                    None
                } else {
                    Some(parse_num(key, value, "positive integer or `all`")?)
                })
            }
            "attack.kind" => {
                self.attack_kind =
                    Some(
                        AttackKind::parse(value).ok_or_else(|| ConfigError::InvalidValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            expected: "fg | fgsm | pgd",
                        })?,
                    )
            }
            "attack.epsilon_grid" => {
                let mut grid = Vec::new();
                for part in value.split(',') {
                    let eps: f64 = parse_num(key, part.trim(), "comma-separated reals")?;
                    grid.push(check_epsilon(key, eps)?);
                }
                if grid.is_empty() {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: "epsilon grid is empty".into(),
                    });
                }
                if !grid.windows(2).all(|w| w[0] < w[1]) {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: "epsilon grid must be strictly ascending".into(),
                    });
                }
                self.epsilon_grid = Some(grid);
            }
            "attack.epsilon" => {
                let eps: f64 = parse_num(key, value, "real in [0, 0.5]")?;
                self.epsilon = Some(check_epsilon(key, eps)?);
            }
            "attack.steps" => {
                let s: usize = parse_num(key, value, "positive integer")?;
                if s == 0 {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: "steps must be at least 1".into(),
                    });
                }
                self.steps = Some(s);
            }
            "attack.step_size" => {
                let s: f64 = parse_num(key, value, "positive real")?;
                if !(s > 0.0) {
                    return Err(ConfigError::OutOfRange {
                        key: key.into(),
                        reason: format!("step_size {s} must be positive"),
                    });
                }
                self.step_size = Some(s);
            }
            "attack.random_start" => self.random_start = Some(parse_bool(key, value)?),
            "hardware.cpu_power_w" => self.cpu_power_w = Some(parse_num(key, value, "positive real")?),
            "hardware.ram_gb" => self.ram_gb = Some(parse_num(key, value, "positive real")?),
            "hardware.ram_w_per_gb" => {
                self.ram_w_per_gb = Some(parse_num(key, value, "positive real")?)
            }
            "hardware.carbon_intensity_g_per_kwh" => {
                self.carbon_intensity = Some(parse_num(key, value, "positive real")?)
            }
            "hardware.sampling_interval_ms" => {
                self.sampling_interval_ms = Some(parse_num(key, value, "positive integer")?)
            }
            "rcti.critical_threshold" => {
                self.critical_threshold = Some(parse_num(key, value, "positive real")?)
            }
            "rcti.equality_tolerance" => {
                self.equality_tolerance = Some(parse_num(key, value, "positive real")?)
            }
            "run.output_dir" => self.output_dir = Some(PathBuf::from(value)),
            "run.seed" => self.seed = Some(parse_num(key, value, "unsigned integer")?),
            "run.include_training_energy" => {
                self.include_training_energy = Some(parse_bool(key, value)?)
            }
            "run.robust_sweep" => {
                self.robust_sweep = Some(if value == "per-epsilon" {
                    RobustSweep::PerEpsilon
                } else if let Some(eps) = value.strip_prefix("fixed:") {
                    let eps: f64 = parse_num(key, eps, "per-epsilon | fixed:<eps>")?;
                    if !(eps > 0.0 && eps <= 0.5) {
                        return Err(ConfigError::OutOfRange {
                            key: key.into(),
                            reason: format!("fixed sweep epsilon {eps} outside (0, 0.5]"),
                        });
                    }
                    RobustSweep::Fixed(eps)
                } else {
                    return Err(ConfigError::InvalidValue {
                        key: key.to_string(),
                        value: value.to_string(),
                        expected: "per-epsilon | fixed:<eps>",
                    });
                })
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            let Some((key, value)) = stripped.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.trim().to_string(),
                });
            };
            self.set(key.trim(), value.trim(), line)?;
        }
        Ok(())
    }

    pub fn finalize(self) -> Result<RunConfig, ConfigError> {
        let data = DataPaths {
            train_images: self
                .train_images
                .ok_or(ConfigError::MissingKey("data.train_images"))?,
            train_labels: self
                .train_labels
                .ok_or(ConfigError::MissingKey("data.train_labels"))?,
            test_images: self
                .test_images
                .ok_or(ConfigError::MissingKey("data.test_images"))?,
            test_labels: self
                .test_labels
                .ok_or(ConfigError::MissingKey("data.test_labels"))?,
        };
        let mut hardware = HardwareProfile::default();
        if let Some(v) = self.cpu_power_w {
            hardware.cpu_power_w = v;
        }
        if let Some(v) = self.ram_gb {
            hardware.ram_gb = v;
        }
        if let Some(v) = self.ram_w_per_gb {
            hardware.ram_w_per_gb = v;
        }
        if let Some(v) = self.carbon_intensity {
            hardware.carbon_intensity_g_per_kwh = v;
        }
        hardware.validate().map_err(|e| ConfigError::OutOfRange {
            key: "hardware".into(),
            reason: e.to_string(),
        })?;
        Ok(RunConfig {
            data,
            architecture: self.architecture.unwrap_or(ArchPreset::Mlp),
            train: TrainParams {
                epochs: self.epochs.unwrap_or(2),
                batch_size: self.batch_size.unwrap_or(64),
                learning_rate: self.learning_rate.unwrap_or(0.1),
                adversarial_ratio: self.adversarial_ratio.unwrap_or(0.5),
                train_subset: self.train_subset.unwrap_or(Some(10_000)),
                test_subset: self.test_subset.unwrap_or(Some(2_000)),
            },
            attack: AttackParams {
                kind: self.attack_kind.unwrap_or(AttackKind::FastGradient),
                epsilon_grid: self
                    .epsilon_grid
                    .unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
                epsilon: self.epsilon,
                steps: self.steps.unwrap_or(10),
                step_size: self.step_size,
                random_start: self.random_start.unwrap_or(true),
            },
            hardware,
            sampling_interval_ms: self.sampling_interval_ms.unwrap_or(100).max(1),
            rcti: RctiThresholds {
                critical: self.critical_threshold.unwrap_or(100.0),
                equality_tol: self.equality_tolerance.unwrap_or(1e-6),
            },
            output_dir: self.output_dir.unwrap_or_else(|| PathBuf::from("rcti_out")),
            seed: self.seed.unwrap_or(42),
            include_training_energy: self.include_training_energy.unwrap_or(false),
            robust_sweep: self.robust_sweep.unwrap_or(RobustSweep::PerEpsilon),
        })
    }
}

/// Parses a config file, then applies `key=value` overrides in order.
pub fn parse_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut builder = ConfigBuilder::default();
    builder.apply_text(&text)?;
    apply_overrides(&mut builder, overrides)?;
    builder.finalize()
}

/// Applies `--set key=value` pairs.
pub fn apply_overrides(
    builder: &mut ConfigBuilder,
    overrides: &[String],
) -> Result<(), ConfigError> {
    for (idx, entry) in overrides.iter().enumerate() {
        let Some((key, value)) = entry.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: idx + 1,
                text: entry.clone(),
            });
        };
        builder.set(key.trim(), value.trim(), idx + 1)?;
    }
    Ok(())
}
