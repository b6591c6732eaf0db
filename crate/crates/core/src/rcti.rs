//! Robustness-Carbon Trade-off Index.
//!
//! Given a baseline measurement and a robust-model measurement, the module
//! computes the relative robustness change `delta_r = (p_i - p_base) /
//! p_base`, the relative carbon change `delta_c = (c_i - c_base) / c_base`,
//! their elasticity-style ratio `rcti = |delta_c / delta_r|`, and a
//! five-way eco classification of that ratio.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("negative performance value {0}")]
    NegativePerformance(f64),
    #[error("baseline carbon must be positive, got {0}")]
    NonPositiveBaselineCarbon(f64),
    #[error("negative carbon value {0}")]
    NegativeCarbon(f64),
    #[error("measurements mix carbon bases ({0:?} vs {1:?})")]
    MixedCarbonBasis(CarbonBasis, CarbonBasis),
    #[error("measurements mix span sets ({0:?} vs {1:?})")]
    MixedSpanSet(String, String),
    #[error("sweep needs at least one model measurement")]
    EmptySweep,
}

/// Which quantity the `carbon` field of a measurement holds. Either works;
/// a sweep must use one consistently.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CarbonBasis {
    TotalEnergyKwh,
    EmissionsG,
}

impl CarbonBasis {
    pub fn name(&self) -> &'static str {
        match self {
            CarbonBasis::TotalEnergyKwh => "energy",
            CarbonBasis::EmissionsG => "emissions",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "energy" => Some(Self::TotalEnergyKwh),
            "emissions" => Some(Self::EmissionsG),
            _ => None,
        }
    }
}

/// Relative robustness change. `Infinite` marks a zero-performance baseline
/// beaten by the robust model; `NoChange` marks the 0/0 case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DeltaR {
    Finite(f64),
    Infinite,
    NoChange,
}

impl DeltaR {
    pub fn as_finite(&self) -> Option<f64> {
        match self {
            DeltaR::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

/// The index value. `Infinite` follows the reporting convention that an
/// infinite or vanishing robustness denominator with a real carbon change is
/// printed as an infinite index; `NoChange` marks a fully degenerate record
/// (neither metric moved) and carries no fabricated number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RctiValue {
    Finite(f64),
    Infinite,
    NoChange,
}

impl RctiValue {
    pub fn as_finite(&self) -> Option<f64> {
        match self {
            RctiValue::Finite(v) => Some(*v),
            _ => None,
        }
    }
}

/// Elasticity bands for the index, ordered from environmentally
/// unsustainable to free robustness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElasticityClass {
    EcoCritical,
    EcoCostly,
    EcoNeutral,
    EcoEfficient,
    EcoIdeal,
}

impl ElasticityClass {
    pub fn label(&self) -> &'static str {
        match self {
            ElasticityClass::EcoCritical => "Eco-Critical",
            ElasticityClass::EcoCostly => "Eco-Costly",
            ElasticityClass::EcoNeutral => "Eco-Neutral",
            ElasticityClass::EcoEfficient => "Eco-Efficient",
            ElasticityClass::EcoIdeal => "Eco-Ideal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Eco-Critical" => Some(Self::EcoCritical),
            "Eco-Costly" => Some(Self::EcoCostly),
            "Eco-Neutral" => Some(Self::EcoNeutral),
            "Eco-Efficient" => Some(Self::EcoEfficient),
            "Eco-Ideal" => Some(Self::EcoIdeal),
            _ => None,
        }
    }
}

/// Classification thresholds: `critical` is the finite cutoff for
/// Eco-Critical, `equality_tol` the tolerance for the measure-zero
/// Eco-Neutral and Eco-Ideal bands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RctiThresholds {
    pub critical: f64,
    pub equality_tol: f64,
}

impl Default for RctiThresholds {
    fn default() -> Self {
        Self {
            critical: 100.0,
            equality_tol: 1e-6,
        }
    }
}

/// One model's performance and carbon reading at an attack strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeasurement {
    pub epsilon: f64,
    /// Accuracy; fraction or percent, as long as the sweep is consistent.
    pub performance: f64,
    pub carbon: f64,
    pub basis: CarbonBasis,
    /// Which pipeline spans were summed into `carbon`.
    pub span_set: String,
}

/// One scored row of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RctiRecord {
    pub epsilon: f64,
    pub delta_r: DeltaR,
    pub delta_c: f64,
    pub rcti: RctiValue,
    /// `None` only for fully degenerate (no-change) records.
    pub elasticity: Option<ElasticityClass>,
}

/// Relative performance change of a robust model against the baseline.
pub fn compute_robustness(p_i: f64, p_base: f64) -> Result<DeltaR, MetricError> {
    if p_i < 0.0 {
        return Err(MetricError::NegativePerformance(p_i));
    }
    if p_base < 0.0 {
        return Err(MetricError::NegativePerformance(p_base));
    }
    if p_base == 0.0 {
        return Ok(if p_i > 0.0 {
            DeltaR::Infinite
        } else {
            DeltaR::NoChange
        });
    }
    Ok(DeltaR::Finite((p_i - p_base) / p_base))
}

/// Relative carbon change of a robust model against the baseline.
pub fn compute_carbon_delta(c_i: f64, c_base: f64) -> Result<f64, MetricError> {
    if c_i < 0.0 {
        return Err(MetricError::NegativeCarbon(c_i));
    }
    if !(c_base > 0.0) {
        return Err(MetricError::NonPositiveBaselineCarbon(c_base));
    }
    Ok((c_i - c_base) / c_base)
}

/// `|delta_c / delta_r|` with the sentinel conventions: an infinite
/// robustness change stays infinite; a vanishing robustness change with a
/// real carbon change is infinite; two vanishing changes are a no-change
/// record.
pub fn compute_rcti(delta_c: f64, delta_r: DeltaR) -> RctiValue {
    match delta_r {
        DeltaR::Infinite => RctiValue::Infinite,
        DeltaR::Finite(r) if r != 0.0 => RctiValue::Finite((delta_c / r).abs()),
        DeltaR::NoChange | DeltaR::Finite(_) => {
            if delta_c == 0.0 {
                RctiValue::NoChange
            } else {
                RctiValue::Infinite
            }
        }
    }
}

/// Maps an index value into its elasticity band. Total and deterministic:
/// every non-negative value or sentinel lands in exactly one class; only
/// no-change records return `None`.
pub fn classify_elasticity(value: RctiValue, th: &RctiThresholds) -> Option<ElasticityClass> {
    match value {
        RctiValue::Infinite => Some(ElasticityClass::EcoCritical),
        RctiValue::NoChange => None,
        RctiValue::Finite(v) => {
            debug_assert!(v >= 0.0, "rcti is an absolute value");
            Some(if v > th.critical {
                ElasticityClass::EcoCritical
            } else if v.abs() <= th.equality_tol {
                ElasticityClass::EcoIdeal
            } else if (v - 1.0).abs() <= th.equality_tol {
                ElasticityClass::EcoNeutral
            } else if v > 1.0 {
                ElasticityClass::EcoCostly
            } else {
                ElasticityClass::EcoEfficient
            })
        }
    }
}

/// Scores one model against one baseline measurement.
pub fn compute_record(
    baseline: &ModelMeasurement,
    model: &ModelMeasurement,
    th: &RctiThresholds,
) -> Result<RctiRecord, MetricError> {
    if baseline.basis != model.basis {
        return Err(MetricError::MixedCarbonBasis(baseline.basis, model.basis));
    }
    if baseline.span_set != model.span_set {
        return Err(MetricError::MixedSpanSet(
            baseline.span_set.clone(),
            model.span_set.clone(),
        ));
    }
    let delta_r = compute_robustness(model.performance, baseline.performance)?;
    let delta_c = compute_carbon_delta(model.carbon, baseline.carbon)?;
    let rcti = compute_rcti(delta_c, delta_r);
    Ok(RctiRecord {
        epsilon: model.epsilon,
        delta_r,
        delta_c,
        rcti,
        elasticity: classify_elasticity(rcti, th),
    })
}

/// Scores every model against a single baseline, in input order.
pub fn run_rcti_sweep(
    baseline: &ModelMeasurement,
    models: &[ModelMeasurement],
    th: &RctiThresholds,
) -> Result<Vec<RctiRecord>, MetricError> {
    if models.is_empty() {
        return Err(MetricError::EmptySweep);
    }
    models
        .iter()
        .map(|model| compute_record(baseline, model, th))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1e-30)
    }

    #[test]
    fn robustness_reference_values() {
        // Accuracy pairs and the deltas they must produce.
        let d = compute_robustness(0.9506, 0.8370).unwrap().as_finite().unwrap();
        assert!(close(d, 0.13570, 2e-4), "got {d}");
        let d = compute_robustness(0.9174, 0.3031).unwrap().as_finite().unwrap();
        assert!(close(d, 2.02672, 1e-5), "got {d}");
        assert_eq!(
            compute_robustness(0.5, 0.5).unwrap(),
            DeltaR::Finite(0.0)
        );
        assert_eq!(compute_robustness(0.02, 0.0).unwrap(), DeltaR::Infinite);
        assert_eq!(compute_robustness(0.0, 0.0).unwrap(), DeltaR::NoChange);
        assert!(compute_robustness(-0.1, 0.5).is_err());
    }

    #[test]
    fn carbon_delta_reference_values() {
        // Hand arithmetic: 4.814e-4 / 3.36e-4 - 1 = 0.4327...
        let d = compute_carbon_delta(4.814e-4, 3.36e-4).unwrap();
        assert!(close(d, 0.432738, 1e-5), "got {d}");
        assert!(close(d, 0.429, 0.01), "within 1% of the reference value");
        // 3.068e-5 / 3.63e-5 - 1 = -0.1548...
        let d = compute_carbon_delta(3.068e-5, 3.63e-5).unwrap();
        assert!(close(d, -0.154821, 1e-5), "got {d}");
        assert!((d - (-0.159)).abs() / 0.159 < 0.03, "within 3%");
        assert_eq!(compute_carbon_delta(5.0, 5.0).unwrap(), 0.0);
        assert!(matches!(
            compute_carbon_delta(1.0, 0.0),
            Err(MetricError::NonPositiveBaselineCarbon(_))
        ));
    }

    #[test]
    fn rcti_reference_values() {
        let v = compute_rcti(0.41401, DeltaR::Finite(2.02672)).as_finite().unwrap();
        assert!(close(v, 0.20427, 1e-4), "got {v}");
        let v = compute_rcti(0.473309, DeltaR::Finite(86.3043)).as_finite().unwrap();
        assert!(close(v, 0.005484, 1e-4), "got {v}");
        // Signs cancel through the absolute value.
        let v = compute_rcti(-0.159, DeltaR::Finite(-0.01077)).as_finite().unwrap();
        assert!(v > 0.0);
        assert!(close(v, 14.763, 1e-3), "got {v}");
        // Eco-neutral diagonal.
        for x in [0.3, -0.7, 12.0] {
            assert_eq!(compute_rcti(x, DeltaR::Finite(x)).as_finite().unwrap(), 1.0);
        }
        assert_eq!(compute_rcti(0.1, DeltaR::Infinite), RctiValue::Infinite);
        assert_eq!(compute_rcti(0.1, DeltaR::Finite(0.0)), RctiValue::Infinite);
        assert_eq!(compute_rcti(0.0, DeltaR::Finite(0.0)), RctiValue::NoChange);
        assert_eq!(compute_rcti(0.0, DeltaR::NoChange), RctiValue::NoChange);
        assert_eq!(compute_rcti(0.3, DeltaR::NoChange), RctiValue::Infinite);
    }

    #[test]
    fn classification_reference_values() {
        let th = RctiThresholds::default();
        let class = |v: f64| classify_elasticity(RctiValue::Finite(v), &th).unwrap();
        assert_eq!(class(14.73085), ElasticityClass::EcoCostly);
        assert_eq!(class(0.49921), ElasticityClass::EcoEfficient);
        assert_eq!(class(1.0), ElasticityClass::EcoNeutral);
        assert_eq!(class(0.0), ElasticityClass::EcoIdeal);
        assert_eq!(class(150.0), ElasticityClass::EcoCritical);
        assert_eq!(
            classify_elasticity(RctiValue::Infinite, &th),
            Some(ElasticityClass::EcoCritical)
        );
        assert_eq!(classify_elasticity(RctiValue::NoChange, &th), None);
    }

    #[test]
    fn classification_is_monotone_in_the_index() {
        let th = RctiThresholds::default();
        // Decreasing index values never move the class away from Eco-Ideal.
        let values = [
            f64::MAX,
            150.0,
            100.5,
            14.73,
            3.2,
            1.0 + 1e-7,
            1.0,
            1.0 - 1e-7,
            0.5,
            0.2,
            1e-5,
            1e-6,
            0.0,
        ];
        let mut last = ElasticityClass::EcoCritical;
        for v in values {
            let class = classify_elasticity(RctiValue::Finite(v), &th).unwrap();
            assert!(class >= last, "class regressed at rcti {v}: {class:?} < {last:?}");
            last = class;
        }
    }

    #[test]
    fn scale_invariance_of_delta_r() {
        for k in [0.01, 1.0, 100.0] {
            let a = compute_robustness(0.9506, 0.8370).unwrap().as_finite().unwrap();
            let b = compute_robustness(0.9506 * k, 0.8370 * k)
                .unwrap()
                .as_finite()
                .unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn meas(epsilon: f64, performance: f64, carbon: f64) -> ModelMeasurement {
        ModelMeasurement {
            epsilon,
            performance,
            carbon,
            basis: CarbonBasis::TotalEnergyKwh,
            span_set: "attack_gen+eval".into(),
        }
    }

    #[test]
    fn sweep_scores_in_input_order() {
        let th = RctiThresholds::default();
        let baseline = meas(0.1, 80.0, 1.0);
        let models = vec![meas(0.1, 90.0, 1.5), meas(0.2, 40.0, 2.0)];
        let records = run_rcti_sweep(&baseline, &models, &th).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].epsilon, 0.1);
        assert_eq!(records[1].epsilon, 0.2);
        let reversed: Vec<_> = models.iter().cloned().rev().collect();
        let swapped = run_rcti_sweep(&baseline, &reversed, &th).unwrap();
        assert_eq!(swapped[0], records[1]);
        assert_eq!(swapped[1], records[0]);
    }

    #[test]
    fn identical_model_gives_degenerate_record() {
        let th = RctiThresholds::default();
        let baseline = meas(0.0, 80.0, 1.0);
        let records = run_rcti_sweep(&baseline, &[baseline.clone()], &th).unwrap();
        assert_eq!(records[0].delta_r, DeltaR::Finite(0.0));
        assert_eq!(records[0].delta_c, 0.0);
        assert_eq!(records[0].rcti, RctiValue::NoChange);
        assert_eq!(records[0].elasticity, None);
    }

    #[test]
    fn mixed_bases_and_span_sets_are_rejected() {
        let th = RctiThresholds::default();
        let baseline = meas(0.0, 80.0, 1.0);
        let mut other = meas(0.0, 70.0, 1.2);
        other.basis = CarbonBasis::EmissionsG;
        assert!(matches!(
            compute_record(&baseline, &other, &th),
            Err(MetricError::MixedCarbonBasis(..))
        ));
        let mut other = meas(0.0, 70.0, 1.2);
        other.span_set = "train+attack_gen+eval".into();
        assert!(matches!(
            compute_record(&baseline, &other, &th),
            Err(MetricError::MixedSpanSet(..))
        ));
        assert!(matches!(
            run_rcti_sweep(&baseline, &[], &th),
            Err(MetricError::EmptySweep)
        ));
    }

    #[test]
    fn carbon_basis_invariance_under_fixed_intensity() {
        // delta_c from emissions equals delta_c from energy when the
        // intensity is a shared constant factor.
        let intensity = 475.0;
        for (e_i, e_base) in [(2.0e-4, 1.5e-4), (3.3e-5, 9.1e-5), (0.5, 0.5)] {
            let from_energy = compute_carbon_delta(e_i, e_base).unwrap();
            let from_emissions =
                compute_carbon_delta(e_i * intensity, e_base * intensity).unwrap();
            assert!(
                (from_energy - from_emissions).abs() <= 1e-9 * from_energy.abs().max(1e-30),
                "energy {from_energy} vs emissions {from_emissions}"
            );
        }
    }
}
