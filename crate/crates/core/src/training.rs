//! Baseline and adversarial training loops.
//!
//! Adversarial training replaces a seeded fraction of each batch with attack
//! outputs crafted against the in-progress model before the SGD step, so the
//! model keeps seeing perturbations matched to its current parameters.

use crate::attacks::{perturb, AttackError, AttackSpec};
use crate::dataset::{gather, LabeledDataset};
use crate::nn::{sgd_step, ArchPreset, Batch, NetworkModel, NnError};
use crate::rng::{stream_seed, Prng};
use thiserror::Error;

// Substream ids carved out of the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_SHUFFLE: u64 = 1;
const STREAM_SELECT: u64 = 2;
const STREAM_NOISE: u64 = 3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("baseline training requires adversarial_ratio == 0, got {0}")]
    BaselineRatioNonzero(f64),
    #[error("adversarial training with ratio {ratio} needs epsilon > 0")]
    ZeroEpsilonAdversarial { ratio: f64 },
    #[error("training diverged at epoch {epoch}, batch {batch}: {source}")]
    Diverged {
        epoch: usize,
        batch: usize,
        #[source]
        source: NnError,
    },
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Training regime shared by baseline and robust models.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of each batch replaced by adversarial samples; 0 for
    /// baseline training.
    pub adversarial_ratio: f64,
    pub seed: u64,
    pub architecture: ArchPreset,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.adversarial_ratio) {
            return Err(TrainError::InvalidConfig(format!(
                "adversarial_ratio {} outside [0, 1]",
                self.adversarial_ratio
            )));
        }
        Ok(())
    }
}

/// Trains without any adversarial samples. Deterministic per seed.
pub fn train_baseline(ds: &LabeledDataset, cfg: &TrainConfig) -> Result<NetworkModel, TrainError> {
    if cfg.adversarial_ratio != 0.0 {
        return Err(TrainError::BaselineRatioNonzero(cfg.adversarial_ratio));
    }
    train_loop(ds, cfg, None)
}

/// Trains with `adversarial_ratio` of each batch replaced by attack outputs
/// crafted against the current model. Deterministic per seed.
pub fn adversarial_train(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    attack: &AttackSpec,
) -> Result<NetworkModel, TrainError> {
    if cfg.adversarial_ratio > 0.0 && attack.epsilon == 0.0 {
        return Err(TrainError::ZeroEpsilonAdversarial {
            ratio: cfg.adversarial_ratio,
        });
    }
    attack.validate()?;
    train_loop(ds, cfg, Some(attack))
}

/// Picks `floor(ratio * batch_len)` distinct batch indices with a partial
/// Fisher-Yates draw from the selection stream.
pub fn select_adversarial_indices(rng: &mut Prng, batch_len: usize, ratio: f64) -> Vec<usize> {
    let k = (ratio * batch_len as f64).floor() as usize;
    let mut pool: Vec<usize> = (0..batch_len).collect();
    for i in 0..k {
        let j = i + rng.index(batch_len - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn train_loop(
    ds: &LabeledDataset,
    cfg: &TrainConfig,
    attack: Option<&AttackSpec>,
) -> Result<NetworkModel, TrainError> {
    cfg.validate()?;
    let mut init_rng = Prng::new(stream_seed(cfg.seed, STREAM_INIT));
    let mut model = cfg.architecture.build(&mut init_rng);
    let mut shuffle_rng = Prng::new(stream_seed(cfg.seed, STREAM_SHUFFLE));
    let mut select_rng = Prng::new(stream_seed(cfg.seed, STREAM_SELECT));
    let noise_seed = stream_seed(cfg.seed, STREAM_NOISE);

    let n = ds.len();
    let sample: usize = ds.images.shape()[1..].iter().product();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        shuffle_rng.shuffle(&mut order);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut slice = gather(ds, chunk);
            if let Some(spec) = attack {
                if cfg.adversarial_ratio > 0.0 {
                    let picked =
                        select_adversarial_indices(&mut select_rng, chunk.len(), cfg.adversarial_ratio);
                    if !picked.is_empty() {
                        let sub = gather(&slice, &picked);
                        let sub_batch = Batch::new(sub.images, sub.labels)?;
                        let mut noise = spec.random_start.then(|| {
                            Prng::new(stream_seed(
                                noise_seed,
                                (epoch as u64) << 32 | batch_idx as u64,
                            ))
                        });
                        let adv = perturb(&model, &sub_batch, spec, noise.as_mut())?;
                        for (row, &dst) in picked.iter().enumerate() {
                            let src = &adv.data()[row * sample..(row + 1) * sample];
                            slice.images.data_mut()[dst * sample..(dst + 1) * sample]
                                .copy_from_slice(src);
                        }
                    }
                }
            }
            let batch = Batch::new(slice.images, slice.labels)?;
            let grads = model.loss_and_grads(&batch).map_err(|source| {
                TrainError::Diverged {
                    epoch,
                    batch: batch_idx,
                    source,
                }
            })?;
            model = sgd_step(model, &grads.param_grads, cfg.learning_rate)?;
        }
    }
    Ok(model)
}
