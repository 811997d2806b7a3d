//! Closed-form physics of an optical parametric oscillator running far below
//! threshold: cavity rates, the pump dependence of the zero-delay coherence,
//! quadrature noise variances and the comb-shaped cross-correlation.
//!
//! All rates are angular (s^-1), powers in watts, times in seconds.

use std::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::{self, SPEED_OF_LIGHT};

fn check_fraction(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value <= 1.0 {
        Ok(value)
    } else {
        Err(Error::InvalidFraction { name, value })
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::invalid(name, format!("must be positive and finite, got {value}")))
    }
}

/// Cavity of the down-converter.
///
/// Built either from the loss rates ([`CavityParams::from_rates`]) or from a
/// fitted linewidth and round-trip time ([`derive_cavity_rates`]). In both
/// cases the escape efficiency and threshold follow from the rates; either
/// can afterwards be replaced by a measured value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityParams {
    gamma1: f64,
    gamma2: f64,
    length: f64,
    tau_f: f64,
    e_nl: f64,
    eta_esc: f64,
    p_th: f64,
    eta_esc_explicit: bool,
    p_th_explicit: bool,
}

impl CavityParams {
    /// `gamma1`, `gamma2` in s^-1, `length` is the optical round-trip path in
    /// metres, `e_nl` the single-pass conversion in W^-1.
    pub fn from_rates(gamma1: f64, gamma2: f64, length: f64, e_nl: f64) -> Result<Self> {
        check_positive("gamma1", gamma1)?;
        if !(gamma2 >= 0.0 && gamma2.is_finite()) {
            return Err(Error::invalid("gamma2", format!("must be non-negative, got {gamma2}")));
        }
        check_positive("length", length)?;
        if !(e_nl > 0.0) {
            return Err(Error::ZeroConversion(e_nl));
        }
        let tau_f = length / SPEED_OF_LIGHT;
        let total_loss = (gamma1 + gamma2) * tau_f;
        if total_loss >= 1.0 {
            return Err(Error::InvalidFraction {
                name: "T+L",
                value: total_loss,
            });
        }
        Ok(Self {
            gamma1,
            gamma2,
            length,
            tau_f,
            e_nl,
            eta_esc: gamma1 / (gamma1 + gamma2),
            p_th: total_loss * total_loss / (4.0 * e_nl),
            eta_esc_explicit: false,
            p_th_explicit: false,
        })
    }

    /// Replace the derived escape efficiency with a measured one.
    pub fn with_escape_efficiency(mut self, eta_esc: f64) -> Result<Self> {
        self.eta_esc = check_fraction("eta_esc", eta_esc)?;
        self.eta_esc_explicit = true;
        Ok(self)
    }

    /// Replace the derived threshold with a measured one.
    pub fn with_threshold_power(mut self, p_th: f64) -> Result<Self> {
        self.p_th = check_positive("p_th", p_th)?;
        self.p_th_explicit = true;
        Ok(self)
    }

    pub fn gamma1(&self) -> f64 {
        self.gamma1
    }
    pub fn gamma2(&self) -> f64 {
        self.gamma2
    }
    /// Cavity linewidth `gamma1 + gamma2`, angular.
    pub fn omega_c(&self) -> f64 {
        self.gamma1 + self.gamma2
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn tau_f(&self) -> f64 {
        self.tau_f
    }
    /// Output coupler transmission `gamma1 * tau_F`.
    pub fn transmission(&self) -> f64 {
        self.gamma1 * self.tau_f
    }
    /// Extra round-trip loss `gamma2 * tau_F`.
    pub fn extra_loss(&self) -> f64 {
        self.gamma2 * self.tau_f
    }
    pub fn e_nl(&self) -> f64 {
        self.e_nl
    }
    pub fn eta_esc(&self) -> f64 {
        self.eta_esc
    }
    pub fn threshold_power(&self) -> f64 {
        self.p_th
    }
    pub fn eta_esc_is_explicit(&self) -> bool {
        self.eta_esc_explicit
    }
    pub fn threshold_is_explicit(&self) -> bool {
        self.p_th_explicit
    }
    /// Finesse including the extra loss.
    pub fn finesse(&self) -> f64 {
        2.0 * PI / (self.tau_f * (self.gamma1 + self.gamma2))
    }
    /// Finesse of the lossless-except-coupler cavity.
    pub fn finesse_unloaded(&self) -> f64 {
        2.0 * PI / (self.tau_f * self.gamma1)
    }
}

/// Cavity from a fitted linewidth `omega_c` (angular), round-trip time and
/// coupler transmission. The extra loss is whatever linewidth the coupler
/// does not explain.
pub fn derive_cavity_rates(omega_c: f64, tau_f: f64, transmission: f64, e_nl: f64) -> Result<CavityParams> {
    check_positive("tau_f", tau_f)?;
    check_positive("omega_c", omega_c)?;
    if !(transmission > 0.0 && transmission < 1.0) {
        return Err(Error::InvalidFraction {
            name: "transmission",
            value: transmission,
        });
    }
    let gamma1 = transmission / tau_f;
    if omega_c <= gamma1 {
        return Err(Error::NonPositiveLoss { omega_c, gamma1 });
    }
    let mut cavity = CavityParams::from_rates(gamma1, omega_c - gamma1, SPEED_OF_LIGHT * tau_f, e_nl)?;
    // keep the caller's round-trip time bit-exact rather than l/c round-tripped
    cavity.tau_f = tau_f;
    let total_loss = omega_c * tau_f;
    cavity.p_th = total_loss * total_loss / (4.0 * e_nl);
    Ok(cavity)
}

/// Oscillation threshold `(T+L)^2 / (4 E_NL)` in watts.
pub fn threshold_power(transmission: f64, extra_loss: f64, e_nl: f64) -> Result<f64> {
    if !(e_nl > 0.0) {
        return Err(Error::ZeroConversion(e_nl));
    }
    let total = transmission + extra_loss;
    if !(transmission >= 0.0 && extra_loss >= 0.0 && total < 1.0) {
        return Err(Error::InvalidFraction { name: "T+L", value: total });
    }
    Ok(total * total / (4.0 * e_nl))
}

/// Pump-to-pair-rate calibration `R = k P`, and the efficiency of the
/// counting path used to turn detected rates back into generated ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpCalibration {
    k: f64,
    transmittance: f64,
    fiber_coupling: f64,
    detector_efficiency: f64,
}

impl PumpCalibration {
    /// Calibration with a lossless counting path.
    pub fn new(k: f64) -> Result<Self> {
        Self::with_counting_path(k, 1.0, 1.0, 1.0)
    }

    pub fn with_counting_path(k: f64, transmittance: f64, fiber_coupling: f64, detector_efficiency: f64) -> Result<Self> {
        Ok(Self {
            k: check_positive("k", k)?,
            transmittance: check_fraction("transmittance", transmittance)?,
            fiber_coupling: check_fraction("fiber_coupling", fiber_coupling)?,
            detector_efficiency: check_fraction("detector_efficiency", detector_efficiency)?,
        })
    }

    pub fn k(&self) -> f64 {
        self.k
    }
    pub fn transmittance(&self) -> f64 {
        self.transmittance
    }
    pub fn fiber_coupling(&self) -> f64 {
        self.fiber_coupling
    }
    pub fn detector_efficiency(&self) -> f64 {
        self.detector_efficiency
    }
    /// Product of the three counting-path factors.
    pub fn eta_counting(&self) -> f64 {
        self.transmittance * self.fiber_coupling * self.detector_efficiency
    }
    /// Generated pair rate at pump power `p`.
    pub fn pair_rate(&self, p: f64) -> f64 {
        self.k * p
    }
    /// Rate seen after the counting path.
    pub fn measured_rate(&self, p: f64) -> f64 {
        self.eta_counting() * self.k * p
    }
}

/// Sideband frequency at which quadrature noise is analysed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisFrequency {
    f: f64,
}

impl AnalysisFrequency {
    pub fn new(f_hz: f64) -> Result<Self> {
        if !(f_hz >= 0.0 && f_hz.is_finite()) {
            return Err(Error::invalid("f", format!("must be non-negative, got {f_hz}")));
        }
        Ok(Self { f: f_hz })
    }

    pub fn hz(&self) -> f64 {
        self.f
    }

    /// `Omega = 2 pi f / (gamma1 + gamma2)`.
    pub fn normalized(&self, cavity: &CavityParams) -> f64 {
        2.0 * PI * self.f / cavity.omega_c()
    }
}

/// Homodyne detection efficiency `eta_tr * eta_vis^2 * eta_qu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEfficiencyHD {
    eta_tr: f64,
    eta_vis: f64,
    eta_qu: f64,
}

impl DetectionEfficiencyHD {
    pub fn new(eta_tr: f64, eta_vis: f64, eta_qu: f64) -> Result<Self> {
        Ok(Self {
            eta_tr: check_fraction("eta_tr", eta_tr)?,
            eta_vis: check_fraction("eta_vis", eta_vis)?,
            eta_qu: check_fraction("eta_qu", eta_qu)?,
        })
    }

    pub fn eta_tr(&self) -> f64 {
        self.eta_tr
    }
    pub fn eta_vis(&self) -> f64 {
        self.eta_vis
    }
    pub fn eta_qu(&self) -> f64 {
        self.eta_qu
    }
    pub fn eta_det(&self) -> f64 {
        self.eta_tr * self.eta_vis * self.eta_vis * self.eta_qu
    }
}

/// Squeezed and anti-squeezed variances in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureVariances {
    pub v_minus: f64,
    pub v_plus: f64,
    /// `ln(v_plus) / 2`.
    pub r: f64,
}

impl QuadratureVariances {
    fn from_pair(v_minus: f64, v_plus: f64) -> Self {
        Self {
            v_minus,
            v_plus,
            r: 0.5 * v_plus.ln(),
        }
    }

    /// Squeezing degree `10 log10(e^{-2r})` in dB.
    pub fn squeezing_db(&self) -> f64 {
        -20.0 * self.r / std::f64::consts::LN_10
    }
}

/// `g2(0)` at pump power `p`, evaluated through the finesse form
/// `2 + (g1+g2)^2 / (4 pi F0 k P / (tau_F F^2))`.
pub fn g2zero_from_pump(cavity: &CavityParams, cal: &PumpCalibration, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::ZeroPump(p));
    }
    let f = cavity.finesse();
    let f0 = cavity.finesse_unloaded();
    let omega_c = cavity.omega_c();
    let denom = 4.0 * PI * f0 / (cavity.tau_f() * f * f) * cal.k() * p;
    Ok(2.0 + omega_c * omega_c / denom)
}

/// Pump power that produces `g2zero`; inverse of [`g2zero_from_pump`].
pub fn pump_from_g2zero(cavity: &CavityParams, cal: &PumpCalibration, g2zero: f64) -> Result<f64> {
    pump_from_g2zero_k(cavity.gamma1(), cal.k(), g2zero)
}

pub(crate) fn pump_from_g2zero_k(gamma1: f64, k: f64, g2zero: f64) -> Result<f64> {
    if !(g2zero > 2.0) {
        return Err(Error::SubThermalG2(g2zero));
    }
    Ok(gamma1 / (2.0 * k * (g2zero - 2.0)))
}

/// Parametric gain rate (s^-1) implied by a zero-delay coherence:
/// `(g1+g2) / sqrt(g2(0) - 2)`.
pub fn epsilon_rate_from_g2zero(cavity: &CavityParams, g2zero: f64) -> Result<f64> {
    if !(g2zero > 2.0) {
        return Err(Error::SubThermalG2(g2zero));
    }
    if g2zero.is_infinite() {
        return Ok(0.0);
    }
    Ok(cavity.omega_c() / (g2zero - 2.0).sqrt())
}

/// Multiplier applied to [`downconversion_rate_from_epsilon`].
///
/// The rate formula and the `g2(0)`-vs-pump relation disagree by a factor
/// of about four when combined through `R = kP`. The constant lets callers
/// pick which one to trust; the default of 1 leaves the rate formula as is.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConvention(pub f64);

impl Default for RateConvention {
    fn default() -> Self {
        RateConvention(1.0)
    }
}

/// Pair generation rate `eps^2 F^2 / (pi F0 tau_F)` for a dimensionless
/// single-pass amplitude gain `eps`.
pub fn downconversion_rate_from_epsilon(cavity: &CavityParams, epsilon: f64, convention: RateConvention) -> Result<f64> {
    if !(epsilon >= 0.0) {
        return Err(Error::invalid("epsilon", format!("must be non-negative, got {epsilon}")));
    }
    let f = cavity.finesse();
    let f0 = cavity.finesse_unloaded();
    Ok(convention.0 * epsilon * epsilon * f * f / (PI * f0 * cavity.tau_f()))
}

pub(crate) fn variance_pair(eta: f64, x: f64, omega: f64) -> (f64, f64) {
    let w = 4.0 * omega * omega;
    let (below, above) = ((1.0 - x) * (1.0 - x) + w, (1.0 + x) * (1.0 + x) + w);
    if eta < 0.5 {
        return (1.0 - eta * 4.0 * x / above, 1.0 + eta * 4.0 * x / below);
    }
    // numerators rearranged so that nothing cancels near threshold
    let lossy = 4.0 * x * (1.0 - eta);
    let v_plus = (above - lossy) / below;
    let v_minus = (below + lossy) / above;
    (v_minus, v_plus)
}

fn pump_ratio(cavity: &CavityParams, p: f64) -> Result<f64> {
    let p_th = cavity.threshold_power();
    if !(p >= 0.0) {
        return Err(Error::invalid("pump", format!("must be non-negative, got {p}")));
    }
    if p >= p_th {
        return Err(Error::AboveThreshold { pump: p, threshold: p_th });
    }
    Ok((p / p_th).sqrt())
}

/// Output-field quadrature variances at pump power `p`.
pub fn quadrature_variances(
    cavity: &CavityParams,
    p: f64,
    freq: AnalysisFrequency,
    eta_esc_override: Option<f64>,
) -> Result<QuadratureVariances> {
    let eta = match eta_esc_override {
        Some(e) => check_fraction("eta_esc", e)?,
        None => cavity.eta_esc(),
    };
    let x = pump_ratio(cavity, p)?;
    let (vm, vp) = variance_pair(eta, x, freq.normalized(cavity));
    Ok(QuadratureVariances::from_pair(vm, vp))
}

/// Variances as seen by a homodyne detector of efficiency `eta_det`.
pub fn detected_variances(
    cavity: &CavityParams,
    p: f64,
    freq: AnalysisFrequency,
    eta_det: &DetectionEfficiencyHD,
    eta_esc: f64,
) -> Result<QuadratureVariances> {
    detected_variances_raw(cavity, p, freq, eta_det.eta_det(), eta_esc)
}

/// As [`detected_variances`] with a bare efficiency, which may be zero.
pub fn detected_variances_raw(
    cavity: &CavityParams,
    p: f64,
    freq: AnalysisFrequency,
    eta_det: f64,
    eta_esc: f64,
) -> Result<QuadratureVariances> {
    if !(0.0..=1.0).contains(&eta_det) {
        return Err(Error::InvalidFraction {
            name: "eta_det",
            value: eta_det,
        });
    }
    let eta_esc = check_fraction("eta_esc", eta_esc)?;
    let x = pump_ratio(cavity, p)?;
    let (vm, vp) = variance_pair(eta_det * eta_esc, x, freq.normalized(cavity));
    Ok(QuadratureVariances::from_pair(vm, vp))
}

/// `10 log10(v)`.
pub fn to_decibel(v: f64) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::NonPositiveVariance(v));
    }
    Ok(units::db(v))
}

/// Parameters of the comb-shaped cross-correlation
/// `N1 [N2 + e^{-Oc|t-t0|} sum_n (1 + a|u_n|) e^{-a|u_n|}]`,
/// `u_n = t - n tau_F - t0`, `a = 2 ln2 / tau_R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CombModelParams {
    pub n1: f64,
    pub n2: f64,
    /// Cavity linewidth, angular s^-1.
    pub omega_c: f64,
    /// Electronic delay, s.
    pub tau0: f64,
    /// Detection resolution, s.
    pub tau_r: f64,
    /// Peak spacing, s.
    pub tau_f: f64,
}

impl CombModelParams {
    pub fn new(n1: f64, n2: f64, omega_c: f64, tau0: f64, tau_r: f64, tau_f: f64) -> Result<Self> {
        let p = Self {
            n1,
            n2,
            omega_c,
            tau0,
            tau_r,
            tau_f,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("n1", self.n1)?;
        if !(self.n2 >= 0.0 && self.n2.is_finite()) {
            return Err(Error::invalid("n2", format!("must be non-negative, got {}", self.n2)));
        }
        check_positive("omega_c", self.omega_c)?;
        if !self.tau0.is_finite() {
            return Err(Error::invalid("tau0", "must be finite"));
        }
        check_positive("tau_r", self.tau_r)?;
        check_positive("tau_f", self.tau_f)?;
        Ok(())
    }

    /// Kernel rate `a = 2 ln2 / tau_R`.
    pub fn kernel_rate(&self) -> f64 {
        2.0 * LN_2 / self.tau_r
    }

    /// Smallest `n` with `e^{-Oc n tau_F} < 1e-9`.
    pub fn default_n_max(&self) -> usize {
        (9.0 * std::f64::consts::LN_10 / (self.omega_c * self.tau_f)).ceil() as usize
    }

    /// Model value at the central peak, `N1 (N2 + 1)`, ignoring the tails of
    /// neighbouring peaks.
    pub fn peak_value(&self) -> f64 {
        self.n1 * (self.n2 + 1.0)
    }

    /// Model value far from the centre, `N1 N2`.
    pub fn baseline(&self) -> f64 {
        self.n1 * self.n2
    }
}

/// Beyond this many kernel decay lengths a peak contributes less than
/// `41 e^{-40}` (about 2e-16) of its height.
const KERNEL_REACH: f64 = 40.0;

/// Range of comb indices whose kernel is non-negligible at offset `d`.
pub(crate) fn active_modes(d: f64, a: f64, tau_f: f64, n_max: usize) -> std::ops::RangeInclusive<i64> {
    let n_max = n_max as i64;
    let centre = (d / tau_f).round();
    let span = (KERNEL_REACH / (a * tau_f)).ceil() + 1.0;
    let lo = (centre - span).max(-(n_max as f64)) as i64;
    let hi = (centre + span).min(n_max as f64) as i64;
    lo.max(-n_max)..=hi.min(n_max)
}

/// Comb model at delay `tau` with the peak sum truncated at `|n| <= n_max`.
///
/// Peaks further than a few dozen kernel widths from `tau` are skipped; their
/// contribution is below double precision.
pub fn comb_model_eval(params: &CombModelParams, tau: f64, n_max: usize) -> f64 {
    let a = params.kernel_rate();
    let d = tau - params.tau0;
    let envelope = (-params.omega_c * d.abs()).exp();
    let mut sum = 0.0;
    if envelope > 0.0 {
        for n in active_modes(d, a, params.tau_f, n_max) {
            let u = (d - n as f64 * params.tau_f).abs();
            sum += (1.0 + a * u) * (-a * u).exp();
        }
    }
    params.n1 * (params.n2 + envelope * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fig7_cavity() -> CavityParams {
        CavityParams::from_rates(82.1e6, 6.9e6, 0.405, 0.02).unwrap()
    }

    fn fig3_params() -> CombModelParams {
        CombModelParams::new(16.0, 0.064, units::linewidth_mhz_to_angular(14.16), -0.98e-9, 185e-12, 1.34e-9).unwrap()
    }

    #[test]
    fn derive_rates_matches_fitted_cavity() {
        let c = derive_cavity_rates(units::linewidth_mhz_to_angular(14.16), 1.34e-9, 0.11, 0.02).unwrap();
        assert_relative_eq!(c.gamma1(), 82.1e6, max_relative = 1e-3);
        assert_relative_eq!(c.gamma2(), 6.9e6, max_relative = 0.01);
        assert_relative_eq!(c.length(), 0.402, max_relative = 1e-3);
        assert_relative_eq!(c.transmission(), 0.11, max_relative = 1e-14);
        assert_relative_eq!(c.tau_f(), c.length() / SPEED_OF_LIGHT, max_relative = 1e-9);
    }

    #[test]
    fn symmetric_losses_give_half_escape() {
        let tau_f = 1.34e-9;
        let c = derive_cavity_rates(2.0 * 0.11 / tau_f, tau_f, 0.11, 0.02).unwrap();
        assert_relative_eq!(c.gamma1(), c.gamma2(), max_relative = 1e-12);
        assert_relative_eq!(c.eta_esc(), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn derive_rates_rejects_bad_inputs() {
        let tau_f = 1.34e-9;
        assert!(matches!(
            derive_cavity_rates(0.11 / tau_f, tau_f, 0.11, 0.02),
            Err(Error::NonPositiveLoss { .. })
        ));
        assert!(matches!(
            derive_cavity_rates(1e8, tau_f, 1.2, 0.02),
            Err(Error::InvalidFraction { .. })
        ));
    }

    #[test]
    fn threshold_values() {
        assert_relative_eq!(threshold_power(0.11, 0.005, 0.02).unwrap(), 0.1653125, max_relative = 1e-12);
        assert_eq!(threshold_power(0.0, 0.0, 0.02).unwrap(), 0.0);
        assert_relative_eq!(threshold_power(0.11, 0.0102, 0.02).unwrap(), 0.180_600_5, max_relative = 1e-6);
        assert!(matches!(threshold_power(0.11, 0.0, 0.0), Err(Error::ZeroConversion(_))));
    }

    #[test]
    fn derived_threshold_and_escape() {
        let c = derive_cavity_rates(0.115 / 1.34e-9, 1.34e-9, 0.11, 0.02).unwrap();
        assert_relative_eq!(c.threshold_power(), 0.1653125, max_relative = 1e-12);
        assert_relative_eq!(c.eta_esc(), 0.11 / 0.115, max_relative = 1e-12);
    }

    #[test]
    fn g2zero_examples() {
        let cal = PumpCalibration::new(1.045e11).unwrap();
        let c = fig7_cavity();
        assert_relative_eq!(g2zero_from_pump(&c, &cal, 30e-6).unwrap(), 15.094_098_883_572_567, max_relative = 1e-12);
        assert_relative_eq!(g2zero_from_pump(&c, &cal, 5e-6).unwrap(), 80.564_593_301_435_4, max_relative = 1e-12);
        assert_relative_eq!(g2zero_from_pump(&c, &cal, 1e12).unwrap(), 2.0, max_relative = 1e-12);
        assert!(matches!(g2zero_from_pump(&c, &cal, 0.0), Err(Error::ZeroPump(_))));
    }

    #[test]
    fn pump_inversion() {
        let cal = PumpCalibration::new(1.045e11).unwrap();
        let c = fig7_cavity();
        assert_relative_eq!(pump_from_g2zero(&c, &cal, 80.564_593_301_435_4).unwrap(), 5e-6, max_relative = 1e-12);
        let g = 2.0 + c.gamma1() / (2.0 * cal.k());
        assert_relative_eq!(pump_from_g2zero(&c, &cal, g).unwrap(), 1.0, max_relative = 1e-12);
        assert!(matches!(pump_from_g2zero(&c, &cal, 2.0), Err(Error::SubThermalG2(_))));
    }

    #[test]
    fn epsilon_rate_examples() {
        let c = fig7_cavity();
        let eps = 1e6;
        let g = 2.0 + c.omega_c().powi(2) / (eps * eps);
        assert_relative_eq!(epsilon_rate_from_g2zero(&c, g).unwrap(), eps, max_relative = 1e-12);
        assert_relative_eq!(epsilon_rate_from_g2zero(&c, 15.09).unwrap(), 2.460e7, max_relative = 1e-3);
        assert_eq!(epsilon_rate_from_g2zero(&c, f64::INFINITY).unwrap(), 0.0);
    }

    #[test]
    fn downconversion_rate_scaling() {
        let c = CavityParams::from_rates(82.1e6, 6.9e6, 1.35e-9 * SPEED_OF_LIGHT, 0.02).unwrap();
        let conv = RateConvention::default();
        assert_eq!(downconversion_rate_from_epsilon(&c, 0.0, conv).unwrap(), 0.0);
        let eps = (0.02f64 * 30e-6).sqrt();
        let r = downconversion_rate_from_epsilon(&c, eps, conv).unwrap();
        // closed form 2 eps^2 g1 / (tau_F^2 (g1+g2)^2), evaluated by hand
        assert_relative_eq!(r, 6824.594_516_945_371, max_relative = 1e-9);
        let r2 = downconversion_rate_from_epsilon(&c, 2.0 * eps, conv).unwrap();
        assert_relative_eq!(r2, 4.0 * r, max_relative = 1e-12);
        let r4 = downconversion_rate_from_epsilon(&c, eps, RateConvention(4.0)).unwrap();
        assert_relative_eq!(r4, 4.0 * r, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_examples() {
        let c = fig7_cavity().with_threshold_power(0.1653).unwrap();
        let f = AnalysisFrequency::new(800e3).unwrap();
        let v0 = quadrature_variances(&c, 0.0, f, Some(0.7)).unwrap();
        assert_eq!((v0.v_minus, v0.v_plus, v0.r), (1.0, 1.0, 0.0));
        let v = quadrature_variances(&c, 5e-6, f, Some(0.7)).unwrap();
        assert_relative_eq!(v.v_minus, 0.984_958_326_547_463, max_relative = 1e-9);
        assert_relative_eq!(v.v_plus, 1.015_371_988_351_245, max_relative = 1e-9);
        assert_relative_eq!(v.r, 0.007_627_518_169_390_715, max_relative = 1e-9);
        assert_relative_eq!(v.squeezing_db(), -0.066_251_781_031_663_57, max_relative = 1e-9);
        assert!(matches!(
            quadrature_variances(&c, 0.1653, f, None),
            Err(Error::AboveThreshold { .. })
        ));
    }

    #[test]
    fn near_threshold_minimum_uncertainty() {
        let c = fig7_cavity();
        let f = AnalysisFrequency::new(0.0).unwrap();
        let v = quadrature_variances(&c, c.threshold_power() * (1.0 - 1e-9), f, Some(1.0)).unwrap();
        assert!(v.v_minus < 1e-8);
        assert_relative_eq!(v.v_plus * v.v_minus, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn detected_variance_reductions() {
        let c = fig7_cavity().with_threshold_power(0.1653).unwrap();
        let f = AnalysisFrequency::new(800e3).unwrap();
        let hd = DetectionEfficiencyHD::new(0.95, 0.97, 0.99).unwrap();
        assert_relative_eq!(hd.eta_det(), 0.884_916_45, max_relative = 1e-9);
        let unit = DetectionEfficiencyHD::new(1.0, 1.0, 1.0).unwrap();
        let a = detected_variances(&c, 50e-3, f, &unit, 0.7).unwrap();
        let b = quadrature_variances(&c, 50e-3, f, Some(0.7)).unwrap();
        assert_eq!(a, b);
        let blind = detected_variances_raw(&c, 50e-3, f, 0.0, 0.7).unwrap();
        assert_eq!((blind.v_minus, blind.v_plus), (1.0, 1.0));
    }

    #[test]
    fn decibels() {
        assert_eq!(to_decibel(1.0).unwrap(), 0.0);
        assert_relative_eq!(to_decibel(0.98496).unwrap(), -0.065_814_06, max_relative = 1e-4);
        assert_relative_eq!(to_decibel(10.0).unwrap(), 10.0, max_relative = 1e-15);
        assert!(matches!(to_decibel(0.0), Err(Error::NonPositiveVariance(_))));
    }

    #[test]
    fn comb_peak_and_baseline() {
        let p = fig3_params();
        let n_max = p.default_n_max();
        assert_eq!(n_max, 174);
        let peak = comb_model_eval(&p, p.tau0, n_max);
        // n = 0 term plus the two nearest neighbours, 2 * 16 * (1 + 10.04) e^{-10.04}
        assert_relative_eq!(peak, 17.039_393_524_369_38, max_relative = 1e-12);
        let far = comb_model_eval(&p, 1e-3, n_max);
        assert_relative_eq!(far, 1.024, max_relative = 1e-12);
        let valley = comb_model_eval(&p, p.tau0 + p.tau_f / 2.0, n_max);
        let left = comb_model_eval(&p, p.tau0, n_max);
        let right = comb_model_eval(&p, p.tau0 + p.tau_f, n_max);
        assert!(valley < left && valley < right);
    }

    #[test]
    fn comb_matches_full_sum() {
        // brute force over every mode index, no skipping
        let p = fig3_params();
        let n_max = p.default_n_max();
        let a = p.kernel_rate();
        for i in 0..200 {
            let tau = -70e-9 + i as f64 * 0.7e-9;
            let d = tau - p.tau0;
            let s: f64 = (-(n_max as i64)..=n_max as i64)
                .map(|n| {
                    let u = (d - n as f64 * p.tau_f).abs();
                    (1.0 + a * u) * (-a * u).exp()
                })
                .sum();
            let full = p.n1 * (p.n2 + (-p.omega_c * d.abs()).exp() * s);
            assert_relative_eq!(comb_model_eval(&p, tau, n_max), full, max_relative = 1e-13);
        }
    }

    #[test]
    fn validated_types_reject_nonsense() {
        assert!(CavityParams::from_rates(0.0, 1.0, 0.4, 0.02).is_err());
        assert!(CavityParams::from_rates(1e8, -1.0, 0.4, 0.02).is_err());
        assert!(matches!(CavityParams::from_rates(1e8, 1.0, 0.4, 0.0), Err(Error::ZeroConversion(_))));
        assert!(PumpCalibration::with_counting_path(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(DetectionEfficiencyHD::new(1.1, 1.0, 1.0).is_err());
        assert!(CombModelParams::new(1.0, -0.1, 1.0, 0.0, 1.0, 1.0).is_err());
        assert!(fig7_cavity().with_escape_efficiency(0.0).is_err());
    }
}
