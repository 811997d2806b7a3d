//! Squeezing parameter from a measured zero-delay coherence.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opo::{pump_from_g2zero_k, threshold_power, variance_pair, CavityParams};
use crate::units::{db, SPEED_OF_LIGHT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FormulaMode {
    /// Invert the pump relation, then evaluate the output-spectrum variances.
    #[default]
    ComposedChain,
    /// The closed-form `r(g2(0))` with the bare `(2 pi f / (g1+g2))^2`
    /// frequency term.
    LiteralEq5,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaEscSource {
    /// `gamma1 / (gamma1 + gamma2)`.
    #[default]
    FromGammas,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PthSource {
    /// W.
    Measured(f64),
    /// `(T+L)^2 / (4 E_NL)`.
    #[default]
    FromLosses,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimationConfig {
    #[serde(default)]
    pub formula_mode: FormulaMode,
    #[serde(default)]
    pub eta_esc_source: EtaEscSource,
    #[serde(default)]
    pub p_th_source: PthSource,
    /// Analysis frequency, Hz.
    pub frequency_hz: f64,
}

impl Default for EstimationConfig {
    fn default() -> Self {
        Self {
            formula_mode: FormulaMode::ComposedChain,
            eta_esc_source: EtaEscSource::FromGammas,
            p_th_source: PthSource::FromLosses,
            frequency_hz: 8e5,
        }
    }
}

impl EstimationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(Error::invalid("frequency_hz", format!("must be positive, got {}", self.frequency_hz)));
        }
        if let EtaEscSource::Explicit(e) = self.eta_esc_source {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::InvalidFraction { name: "eta_esc", value: e });
            }
        }
        if let PthSource::Measured(p) = self.p_th_source {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::invalid("p_th", format!("must be positive, got {p}")));
            }
        }
        Ok(())
    }
}

/// Everything the estimate was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateInputs {
    pub g2_zero: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub length: f64,
    pub e_nl: f64,
    pub k: f64,
    pub f: f64,
    /// Value used, whatever its source.
    pub eta_esc: f64,
    pub p_th: f64,
    pub eta_esc_source: EtaEscSource,
    pub p_th_source: PthSource,
    pub formula_mode: FormulaMode,
    /// Pump power implied by `g2_zero`, W.
    pub pump_power: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingEstimate {
    pub r: f64,
    pub sigma_r: f64,
    pub v_minus: f64,
    pub v_plus: f64,
    pub squeezing_db: f64,
    pub sigma_db: f64,
    pub inputs: EstimateInputs,
}

/// Squeezing parameter `r = ln(V+)/2` implied by `g2zero`.
pub fn estimate_squeezing(g2zero: f64, cavity: &CavityParams, k: f64, cfg: &EstimationConfig) -> Result<SqueezingEstimate> {
    cfg.validate()?;
    if !(g2zero > 2.0) {
        return Err(Error::SubThermalG2(g2zero));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invalid("k", format!("must be positive, got {k}")));
    }
    let (g1, g2) = (cavity.gamma1(), cavity.gamma2());
    let eta_esc = match cfg.eta_esc_source {
        EtaEscSource::FromGammas => g1 / (g1 + g2),
        EtaEscSource::Explicit(e) => e,
    };
    let p_th = match cfg.p_th_source {
        PthSource::Measured(p) => p,
        PthSource::FromLosses => threshold_power(cavity.transmission(), cavity.extra_loss(), cavity.e_nl())?,
    };
    let pump = pump_from_g2zero_k(g1, k, g2zero)?;
    let omega = 2.0 * PI * cfg.frequency_hz / (g1 + g2);

    let (v_minus, v_plus) = match cfg.formula_mode {
        FormulaMode::ComposedChain => {
            if pump >= p_th {
                return Err(Error::AboveThreshold { pump, threshold: p_th });
            }
            variance_pair(eta_esc, (pump / p_th).sqrt(), omega)
        }
        FormulaMode::LiteralEq5 => {
            let root = if g2zero.is_infinite() {
                0.0
            } else {
                (2.0 * g1 * cavity.e_nl() / (k * (g2zero - 2.0))).sqrt()
            };
            let c_over_l = SPEED_OF_LIGHT / cavity.length();
            let y = c_over_l / (g1 + g2) * root;
            if y >= 1.0 {
                return Err(Error::AboveThreshold { pump, threshold: pump / (y * y) });
            }
            let num = 4.0 * g1 * c_over_l / ((g1 + g2) * (g1 + g2)) * root;
            let v_plus = 1.0 + num / ((1.0 - y).powi(2) + omega * omega);
            let v_minus = 1.0 - num / ((1.0 + y).powi(2) + omega * omega);
            (v_minus, v_plus)
        }
    };
    let r = 0.5 * v_plus.ln();
    Ok(SqueezingEstimate {
        r,
        sigma_r: 0.0,
        v_minus,
        v_plus,
        squeezing_db: db((-2.0 * r).exp()),
        sigma_db: 0.0,
        inputs: EstimateInputs {
            g2_zero: g2zero,
            gamma1: g1,
            gamma2: g2,
            length: cavity.length(),
            e_nl: cavity.e_nl(),
            k,
            f: cfg.frequency_hz,
            eta_esc,
            p_th,
            eta_esc_source: cfg.eta_esc_source,
            p_th_source: cfg.p_th_source,
            formula_mode: cfg.formula_mode,
            pump_power: pump,
        },
    })
}

/// A value with its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub sigma: f64,
}

impl Measured {
    pub fn new(value: f64, sigma: f64) -> Self {
        Self { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, sigma: 0.0 }
    }
}

/// Inputs of [`propagate_uncertainty`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertainInputs {
    pub g2_zero: Measured,
    pub gamma1: Measured,
    pub gamma2: Measured,
    pub length: Measured,
    pub e_nl: Measured,
    pub k: Measured,
    pub f: Measured,
}

impl UncertainInputs {
    /// Exact inputs taken from a cavity.
    pub fn exact(g2zero: f64, cavity: &CavityParams, k: f64, f: f64) -> Self {
        Self {
            g2_zero: Measured::exact(g2zero),
            gamma1: Measured::exact(cavity.gamma1()),
            gamma2: Measured::exact(cavity.gamma2()),
            length: Measured::exact(cavity.length()),
            e_nl: Measured::exact(cavity.e_nl()),
            k: Measured::exact(k),
            f: Measured::exact(f),
        }
    }

    fn all(&self) -> [Measured; 7] {
        [self.g2_zero, self.gamma1, self.gamma2, self.length, self.e_nl, self.k, self.f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Uncertainty {
    pub sigma_r: f64,
    pub sigma_db: f64,
    pub samples: usize,
    pub failed: usize,
}

const MAX_REDRAWS: usize = 1000;

/// Normal draw restricted to `value > lower` by rejection.
fn truncated<R: Rng>(rng: &mut R, m: Measured, lower: f64) -> Option<f64> {
    if m.sigma == 0.0 {
        return Some(m.value);
    }
    (0..MAX_REDRAWS).find_map(|_| {
        let z: f64 = rng.sample(StandardNormal);
        let v = m.value + m.sigma * z;
        (v > lower).then_some(v)
    })
}

fn one_sample(inputs: &UncertainInputs, cfg: &EstimationConfig, seed: u64, index: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let lowers = [2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut v = [0.0; 7];
    for ((slot, m), lower) in v.iter_mut().zip(inputs.all()).zip(lowers) {
        *slot = truncated(&mut rng, m, lower).ok_or_else(|| Error::invalid("sample", "no draw inside the validity domain"))?;
    }
    let [g2zero, gamma1, gamma2, length, e_nl, k, f] = v;
    let cavity = CavityParams::from_rates(gamma1, gamma2, length, e_nl)?;
    let cfg = EstimationConfig {
        frequency_hz: f,
        ..*cfg
    };
    let est = estimate_squeezing(g2zero, &cavity, k, &cfg)?;
    Ok((est.r, est.squeezing_db))
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    // shifted by the first value so identical samples give exactly zero
    let d: Vec<f64> = values.iter().map(|v| v - values[0]).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Monte Carlo spread of `r` and its dB value under independent truncated
/// normal inputs. Sample `i` draws from stream `i` of a generator seeded with
/// `seed`, so the result does not depend on scheduling.
pub fn propagate_uncertainty(inputs: &UncertainInputs, cfg: &EstimationConfig, n_samples: usize, seed: u64) -> Result<Uncertainty> {
    cfg.validate()?;
    if n_samples < 1000 {
        return Err(Error::invalid("n_samples", format!("need at least 1000, got {n_samples}")));
    }
    if let Some(m) = inputs.all().iter().find(|m| !(m.sigma >= 0.0) || !m.value.is_finite()) {
        return Err(Error::invalid("input", format!("bad value {m:?}")));
    }
    let draws: Vec<Result<(f64, f64)>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|i| one_sample(inputs, cfg, seed, i))
        .collect();
    let ok: Vec<(f64, f64)> = draws.iter().filter_map(|d| d.as_ref().ok().copied()).collect();
    let failed = n_samples - ok.len();
    if failed * 100 > n_samples {
        return Err(Error::TooManyFailedSamples {
            failed,
            total: n_samples,
        });
    }
    let rs: Vec<f64> = ok.iter().map(|s| s.0).collect();
    let dbs: Vec<f64> = ok.iter().map(|s| s.1).collect();
    Ok(Uncertainty {
        sigma_r: sample_std(&rs),
        sigma_db: sample_std(&dbs),
        samples: n_samples,
        failed,
    })
}
