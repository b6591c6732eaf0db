//! Stub-driven energy model properties: monotonicity, additivity of the
//! integrator, and the emission-proportionality identity that lets carbon
//! deltas be computed from either energy or emissions.

use proptest::prelude::*;
use rcti_core::energy::{compute_emissions, EnergyIntegrator, HardwareProfile};
use rcti_core::rcti::compute_carbon_delta;

fn profile() -> HardwareProfile {
    HardwareProfile {
        cpu_power_w: 42.5,
        ram_gb: 12.67834,
        ram_w_per_gb: 0.375,
        carbon_intensity_g_per_kwh: 475.0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn longer_spans_never_report_less_energy(
        samples in proptest::collection::vec((0.0f64..5.0, 0.0f64..1.0), 1..30),
        cut in 0usize..29,
    ) {
        let cut = cut.min(samples.len() - 1);
        let mut short = EnergyIntegrator::new(profile());
        let mut long = EnergyIntegrator::new(profile());
        for (i, &(dt, util)) in samples.iter().enumerate() {
            long.add_sample(dt, util);
            if i < cut {
                short.add_sample(dt, util);
            }
        }
        let short = short.finish("short");
        let long = long.finish("long");
        prop_assert!(long.cpu_energy_kwh >= short.cpu_energy_kwh);
        prop_assert!(long.ram_energy_kwh >= short.ram_energy_kwh);
        prop_assert!(long.total_energy_kwh >= short.total_energy_kwh);
        prop_assert!(long.emissions_g >= short.emissions_g);
    }

    #[test]
    fn split_integration_is_additive(
        samples in proptest::collection::vec((0.0f64..5.0, 0.0f64..1.0), 2..30),
        cut in 1usize..29,
    ) {
        let cut = cut.min(samples.len() - 1);
        let mut whole = EnergyIntegrator::new(profile());
        let mut a = EnergyIntegrator::new(profile());
        let mut b = EnergyIntegrator::new(profile());
        for (i, &(dt, util)) in samples.iter().enumerate() {
            whole.add_sample(dt, util);
            if i < cut { a.add_sample(dt, util) } else { b.add_sample(dt, util) }
        }
        let whole = whole.finish("whole");
        let a = a.finish("a");
        let b = b.finish("b");
        let sum = a.total_energy_kwh + b.total_energy_kwh;
        prop_assert!((sum - whole.total_energy_kwh).abs() <= 1e-12 * whole.total_energy_kwh.max(1e-30));
    }

    #[test]
    fn carbon_delta_identical_from_energy_or_emissions(
        e_base in 1e-9f64..1.0,
        e_i in 0.0f64..1.0,
        intensity in 1.0f64..2000.0,
    ) {
        let from_energy = compute_carbon_delta(e_i, e_base).unwrap();
        let m_i = compute_emissions(e_i, intensity).unwrap();
        let m_base = compute_emissions(e_base, intensity).unwrap();
        let from_emissions = compute_carbon_delta(m_i, m_base).unwrap();
        let denom = from_energy.abs().max(1e-30);
        prop_assert!(
            (from_energy - from_emissions).abs() / denom <= 1e-9,
            "{} vs {}", from_energy, from_emissions
        );
    }
}
