use std::f64::consts::PI;

use g2sqz::estimator::{
    estimate_squeezing, propagate_uncertainty, EstimationConfig, EtaEscSource, FormulaMode, Measured, PthSource,
    UncertainInputs,
};
use g2sqz::opo::{derive_cavity_rates, threshold_power, CavityParams};
use g2sqz::units::linewidth_mhz_to_angular;
use g2sqz::Error;
use proptest::prelude::*;

const K: f64 = 1.045e11;

fn cavity() -> CavityParams {
    derive_cavity_rates(linewidth_mhz_to_angular(14.16), 1.34e-9, 0.11, 0.02).unwrap()
}

fn measured_cfg() -> EstimationConfig {
    EstimationConfig {
        formula_mode: FormulaMode::ComposedChain,
        eta_esc_source: EtaEscSource::Explicit(0.7),
        p_th_source: PthSource::Measured(0.1653),
        frequency_hz: 8e5,
    }
}

fn rates_cfg(mode: FormulaMode) -> EstimationConfig {
    EstimationConfig {
        formula_mode: mode,
        eta_esc_source: EtaEscSource::FromGammas,
        p_th_source: PthSource::FromLosses,
        frequency_hz: 8e5,
    }
}

fn g2_inputs(rel: f64) -> UncertainInputs {
    let mut inputs = UncertainInputs::exact(80.56, &cavity(), K, 8e5);
    inputs.g2_zero = Measured::new(80.56, rel * 80.56);
    inputs
}

#[test]
fn headline_point_with_measured_threshold() {
    let e = estimate_squeezing(80.56, &cavity(), K, &measured_cfg()).unwrap();
    assert!((e.r - 0.00763).abs() < 1e-5, "{}", e.r);
    assert!((e.squeezing_db + 0.0662).abs() < 1e-4, "{}", e.squeezing_db);
    assert!((e.v_plus - (2.0 * e.r).exp()).abs() < 1e-15);
    assert_eq!(e.inputs.g2_zero, 80.56);
    assert_eq!(e.inputs.formula_mode, FormulaMode::ComposedChain);
}

#[test]
fn strong_pump_point_with_escape_from_rates() {
    let cfg = EstimationConfig {
        eta_esc_source: EtaEscSource::FromGammas,
        ..measured_cfg()
    };
    let e = estimate_squeezing(3.964, &cavity(), K, &cfg).unwrap();
    assert!((e.inputs.eta_esc - 0.9225).abs() < 1e-3, "{}", e.inputs.eta_esc);
    assert!((e.r - 0.0637).abs() < 2e-4, "{}", e.r);
    assert!((e.squeezing_db + 0.553).abs() < 2e-3, "{}", e.squeezing_db);
}

#[test]
fn monte_carlo_matches_first_order_spread() {
    let e = estimate_squeezing(80.56, &cavity(), K, &measured_cfg()).unwrap();
    // r goes as (g2 - 2)^(-1/2) at small r
    let analytic = e.squeezing_db.abs() * 0.5 * 0.015 * 80.56 / (80.56 - 2.0);
    assert!((analytic - 0.000509).abs() < 5e-6);
    let u = propagate_uncertainty(&g2_inputs(0.015), &measured_cfg(), 10_000, 3).unwrap();
    assert!((u.sigma_db / analytic - 1.0).abs() < 0.1, "{} vs {analytic}", u.sigma_db);
    assert_eq!(u.failed, 0);
}

#[test]
fn doubling_samples_barely_moves_the_spread() {
    let one = propagate_uncertainty(&g2_inputs(0.015), &measured_cfg(), 10_000, 11).unwrap();
    let two = propagate_uncertainty(&g2_inputs(0.015), &measured_cfg(), 20_000, 11).unwrap();
    assert!((two.sigma_db / one.sigma_db - 1.0).abs() < 0.03);
}

#[test]
fn propagation_is_deterministic_per_seed() {
    let mut inputs = g2_inputs(0.015);
    inputs.gamma1.sigma = 0.01 * inputs.gamma1.value;
    inputs.k.sigma = 0.02 * K;
    let a = propagate_uncertainty(&inputs, &measured_cfg(), 5000, 99).unwrap();
    let b = propagate_uncertainty(&inputs, &measured_cfg(), 5000, 99).unwrap();
    let c = propagate_uncertainty(&inputs, &measured_cfg(), 5000, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.sigma_db, c.sigma_db);
}

#[test]
fn too_few_samples_are_rejected() {
    let err = propagate_uncertainty(&g2_inputs(0.015), &measured_cfg(), 999, 1).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter { .. }));
}

#[test]
fn many_failed_samples_abort() {
    // g2 close to 2 puts most draws above threshold
    let p_th = threshold_power(0.11, cavity().extra_loss(), 0.02).unwrap();
    let g2 = 2.0 + cavity().gamma1() / (2.0 * K * p_th) * 1.05;
    let mut inputs = UncertainInputs::exact(g2, &cavity(), K, 8e5);
    inputs.g2_zero.sigma = 0.2 * (g2 - 2.0);
    let err = propagate_uncertainty(&inputs, &rates_cfg(FormulaMode::ComposedChain), 2000, 5).unwrap_err();
    assert!(matches!(err, Error::TooManyFailedSamples { .. }), "{err}");
}

#[test]
fn composed_and_literal_forms_agree_at_the_analysis_frequency() {
    for g2 in [3.0, 4.0, 15.09, 80.56, 400.0] {
        let chain = estimate_squeezing(g2, &cavity(), K, &rates_cfg(FormulaMode::ComposedChain)).unwrap();
        let literal = estimate_squeezing(g2, &cavity(), K, &rates_cfg(FormulaMode::LiteralEq5)).unwrap();
        assert!((chain.squeezing_db - literal.squeezing_db).abs() < 0.01, "g2 {g2}: {} vs {}", chain.squeezing_db, literal.squeezing_db);
    }
}

#[test]
fn small_squeezing_follows_the_first_order_expansion() {
    let c = cavity();
    for g2 in [120.0, 300.0, 2000.0] {
        let e = estimate_squeezing(g2, &c, K, &measured_cfg()).unwrap();
        let p = c.gamma1() / (2.0 * K * (g2 - 2.0));
        let x = (p / 0.1653).sqrt();
        let omega = 2.0 * PI * 8e5 / (c.gamma1() + c.gamma2());
        let first = 2.0 * 0.7 * x / (1.0 + 4.0 * omega * omega);
        assert!((e.r / first - 1.0).abs() < 1e-2, "g2 {g2}: {} vs {first}", e.r);
    }
}

proptest! {
    #[test]
    fn squeezing_falls_as_g2_rises(g2 in 2.5f64..1e4, step in 1e-3f64..10.0) {
        for cfg in [measured_cfg(), rates_cfg(FormulaMode::ComposedChain), rates_cfg(FormulaMode::LiteralEq5)] {
            let lo = estimate_squeezing(g2, &cavity(), K, &cfg).unwrap();
            let hi = estimate_squeezing(g2 + step, &cavity(), K, &cfg).unwrap();
            prop_assert!(hi.r < lo.r);
            prop_assert!(lo.r >= 0.0 && lo.squeezing_db <= 0.0);
            prop_assert!(lo.v_minus < 1.0 && lo.v_plus > 1.0);
        }
    }
}
