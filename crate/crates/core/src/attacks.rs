//! Evasion attacks: Fast Gradient (FG/FGSM) and Projected Gradient Descent.
//!
//! Both craft adversarial test sets and feed adversarial training. Attacks
//! are white-box: they take the loss gradient with respect to the input from
//! the model being attacked. With `random_start` off they are pure functions
//! of (model, batch, spec) and bit-deterministic.

use crate::dataset::LabeledDataset;
use crate::nn::{Batch, NetworkModel, NnError};
use crate::rng::{stream_seed, Prng};
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("attack spec invalid: {0}")]
    InvalidSpec(String),
    #[error("{op} called with a {found:?} spec")]
    KindMismatch { op: &'static str, found: AttackKind },
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AttackKind {
    FastGradient,
    Pgd,
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::FastGradient => "fg",
            AttackKind::Pgd => "pgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fg" | "fgsm" => Some(Self::FastGradient),
            "pgd" => Some(Self::Pgd),
            _ => None,
        }
    }
}

/// Attack parameters. `epsilon` is an L-infinity budget in pixel units;
/// `step_size`, `num_steps`, and `random_start` only apply to PGD.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub epsilon: f64,
    pub step_size: f64,
    pub num_steps: usize,
    pub random_start: bool,
    pub clip: (f64, f64),
}

impl AttackSpec {
    pub fn fast_gradient(epsilon: f64) -> Self {
        Self {
            kind: AttackKind::FastGradient,
            epsilon,
            step_size: 0.0,
            num_steps: 1,
            random_start: false,
            clip: (0.0, 1.0),
        }
    }

    pub fn pgd(epsilon: f64, step_size: f64, num_steps: usize, random_start: bool) -> Self {
        Self {
            kind: AttackKind::Pgd,
            epsilon,
            step_size,
            num_steps,
            random_start,
            clip: (0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<(), AttackError> {
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(AttackError::InvalidSpec(format!(
                "epsilon {} outside [0, 1]",
                self.epsilon
            )));
        }
        if self.kind == AttackKind::Pgd {
            if !(self.step_size > 0.0) {
                return Err(AttackError::InvalidSpec(format!(
                    "pgd step_size {} must be positive",
                    self.step_size
                )));
            }
            if self.num_steps < 1 {
                return Err(AttackError::InvalidSpec("pgd needs at least one step".into()));
            }
        }
        Ok(())
    }
}

fn sign(g: f64) -> f64 {
    if g > 0.0 {
        1.0
    } else if g < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-shot fast gradient attack:
/// `x_adv = clip(x + epsilon * sign(dloss/dx), lo, hi)`.
pub fn fgsm(model: &NetworkModel, batch: &Batch, spec: &AttackSpec) -> Result<Tensor, AttackError> {
    spec.validate()?;
    if spec.kind != AttackKind::FastGradient {
        return Err(AttackError::KindMismatch {
            op: "fgsm",
            found: spec.kind,
        });
    }
    let grads = model.loss_and_grads(batch)?;
    let (lo, hi) = spec.clip;
    let data = batch
        .images()
        .data()
        .iter()
        .zip(grads.input_grads.data())
        .map(|(&x, &g)| (x + spec.epsilon * sign(g)).clamp(lo, hi))
        .collect();
    Ok(Tensor::new(batch.images().shape().to_vec(), data).expect("fgsm preserves shape"))
}

/// Iterated projected attack. Each step moves `step_size` along the gradient
/// sign, clips to the pixel range, and projects back onto the epsilon ball
/// around the original images. With `num_steps == 1`, `step_size == epsilon`
/// and no random start this reduces to `fgsm` bit-for-bit.
pub fn pgd(
    model: &NetworkModel,
    batch: &Batch,
    spec: &AttackSpec,
    mut noise_rng: Option<&mut Prng>,
) -> Result<Tensor, AttackError> {
    spec.validate()?;
    if spec.kind != AttackKind::Pgd {
        return Err(AttackError::KindMismatch {
            op: "pgd",
            found: spec.kind,
        });
    }
    let x0 = batch.images().data();
    let (lo_px, hi_px) = spec.clip;
    let ball_lo: Vec<f64> = x0.iter().map(|&x| (x - spec.epsilon).max(lo_px)).collect();
    let ball_hi: Vec<f64> = x0.iter().map(|&x| (x + spec.epsilon).min(hi_px)).collect();

    let mut x: Vec<f64> = if spec.random_start {
        let rng = noise_rng.as_deref_mut().ok_or_else(|| {
            AttackError::InvalidSpec("random_start requires a noise generator".into())
        })?;
        x0.iter()
            .enumerate()
            .map(|(i, &v)| (v + rng.uniform(-spec.epsilon, spec.epsilon)).clamp(ball_lo[i], ball_hi[i]))
            .collect()
    } else {
        x0.to_vec()
    };

    let shape = batch.images().shape().to_vec();
    for _ in 0..spec.num_steps {
        let current = Batch::new(
            Tensor::new(shape.clone(), x.clone()).expect("pgd iterate shape"),
            batch.labels().to_vec(),
        )?;
        let grads = model.loss_and_grads(&current)?;
        for (i, g) in grads.input_grads.data().iter().enumerate() {
            let stepped = (x[i] + spec.step_size * sign(*g)).clamp(lo_px, hi_px);
            x[i] = stepped.clamp(ball_lo[i], ball_hi[i]);
        }
    }
    Ok(Tensor::new(shape, x).expect("pgd preserves shape"))
}

/// Dispatches on the spec kind.
pub fn perturb(
    model: &NetworkModel,
    batch: &Batch,
    spec: &AttackSpec,
    noise_rng: Option<&mut Prng>,
) -> Result<Tensor, AttackError> {
    match spec.kind {
        AttackKind::FastGradient => fgsm(model, batch, spec),
        AttackKind::Pgd => pgd(model, batch, spec, noise_rng),
    }
}

/// Replaces every image with the attack output against the given model,
/// processed in batches of `batch_size`. Labels are unchanged. `seed` feeds
/// the per-batch noise streams when the spec uses random starts.
pub fn craft_adversarial_testset(
    model: &NetworkModel,
    ds: &LabeledDataset,
    spec: &AttackSpec,
    batch_size: usize,
    seed: u64,
) -> Result<LabeledDataset, AttackError> {
    spec.validate()?;
    let shape = ds.images.shape().to_vec();
    let sample: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(ds.images.len());
    for (batch_idx, batch) in crate::dataset::batches(ds, batch_size).iter().enumerate() {
        let mut rng = spec
            .random_start
            .then(|| Prng::new(stream_seed(seed, batch_idx as u64)));
        let adv = perturb(model, batch, spec, rng.as_mut())?;
        data.extend_from_slice(adv.data());
    }
    debug_assert_eq!(data.len(), ds.len() * sample);
    Ok(LabeledDataset {
        images: Tensor::new(shape, data).expect("adversarial set preserves shape"),
        labels: ds.labels.clone(),
        provenance: format!(
            "{};adv(kind={},eps={})",
            ds.provenance,
            spec.kind.name(),
            spec.epsilon
        ),
    })
}
