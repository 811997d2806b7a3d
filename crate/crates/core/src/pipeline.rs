//! End-to-end run: tags to histogram to comb fit to cavity to squeezing.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::correlator::{correlate, g2_at_zero, normalize_with, CorrelationHistogram, G2Method, Normalization, Singles, Window};
use crate::error::{Error, Result};
use crate::estimator::{
    estimate_squeezing, propagate_uncertainty, EstimationConfig, EtaEscSource, FormulaMode, Measured, PthSource,
    SqueezingEstimate, UncertainInputs, Uncertainty,
};
use crate::fit::{fit_comb, fit_rate_linear, CombFit, CombFitOptions, RateFit, RateModel, RatePoint};
use crate::io::read_tags;
use crate::opo::{derive_cavity_rates, variance_pair, CavityParams};
use crate::sim::{simulate, SimConfig, TruthRecord};
use crate::tags::TimeTagStream;
use crate::units::SPEED_OF_LIGHT;

/// Where the tags come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagSource {
    /// [`SimConfig::reference_setup`].
    ReferenceSetup { pump_power: f64, duration: f64, seed: u64 },
    Simulate(SimConfig),
    TagFile {
        path: PathBuf,
        #[serde(default)]
        channel_a: u8,
        #[serde(default = "one")]
        channel_b: u8,
    },
}

fn one() -> u8 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub bin_ps: u64,
    pub bins: usize,
    #[serde(default)]
    pub center_ps: i64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            bin_ps: 35,
            bins: 4000,
            center_ps: 0,
        }
    }
}

/// Source of the pair-rate calibration `k` (s^-1 W^-1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSource {
    Explicit {
        value: f64,
        #[serde(default)]
        sigma: f64,
    },
    RateFit {
        points: Vec<RatePoint>,
        eta_counting: f64,
        #[serde(default)]
        model: RateModel,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub samples: usize,
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self { samples: 10_000, seed: 1 }
    }
}

fn default_transmission() -> f64 {
    0.11
}

fn default_e_nl() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: TagSource,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub normalization: Normalization,
    /// Output coupler transmission.
    #[serde(default = "default_transmission")]
    pub transmission: f64,
    /// Single-pass conversion, W^-1.
    #[serde(default = "default_e_nl")]
    pub e_nl: f64,
    pub k: KSource,
    #[serde(default)]
    pub g2_method: G2Method,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub uncertainty: UncertaintyConfig,
}

impl PipelineConfig {
    /// Simulated reference run analysed with the measured threshold and
    /// escape efficiency.
    pub fn reference_setup(pump_power: f64, duration: f64, seed: u64) -> Self {
        Self {
            source: TagSource::ReferenceSetup {
                pump_power,
                duration,
                seed,
            },
            window: WindowConfig::default(),
            normalization: Normalization::Singles,
            transmission: default_transmission(),
            e_nl: default_e_nl(),
            k: KSource::Explicit {
                value: 1.045e11,
                sigma: 0.0,
            },
            g2_method: G2Method::CombFit,
            estimation: EstimationConfig {
                formula_mode: FormulaMode::ComposedChain,
                eta_esc_source: EtaEscSource::Explicit(0.7),
                p_th_source: PthSource::Measured(0.1653),
                frequency_hz: 8e5,
            },
            uncertainty: UncertaintyConfig::default(),
        }
    }
}

/// The truth of a simulated run and the squeezing it implies under the same
/// estimation conventions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthComparison {
    pub record: TruthRecord,
    pub r: f64,
    pub squeezing_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub r: f64,
    pub sigma_r: f64,
    pub squeezing_db: f64,
    pub sigma_db: f64,
    pub g2_zero: f64,
    pub sigma_g2_zero: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub k: f64,
    pub f: f64,
    pub eta_esc: f64,
    pub p_th: f64,
    pub formula_mode: FormulaMode,
    pub singles: Singles,
    pub coincidences: u64,
    pub comb_fit: CombFit,
    pub cavity: CavityParams,
    pub rate_fit: Option<RateFit>,
    pub estimate: SqueezingEstimate,
    pub uncertainty: Uncertainty,
    pub truth: Option<TruthComparison>,
    pub warnings: Vec<String>,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

fn load(source: &TagSource) -> Result<(TimeTagStream, TimeTagStream, Option<TruthRecord>, Vec<String>)> {
    match source {
        TagSource::ReferenceSetup {
            pump_power,
            duration,
            seed,
        } => {
            let out = simulate(&SimConfig::reference_setup(*pump_power, *duration, *seed))?;
            Ok((out.a, out.b, Some(out.truth), out.warnings))
        }
        TagSource::Simulate(cfg) => {
            let out = simulate(cfg)?;
            Ok((out.a, out.b, Some(out.truth), out.warnings))
        }
        TagSource::TagFile {
            path,
            channel_a,
            channel_b,
        } => {
            let mut streams = read_tags(path)?;
            let truth = streams.first().and_then(|s| s.truth().copied());
            let mut take = |ch: u8| {
                streams
                    .iter_mut()
                    .find(|s| s.channel() == ch)
                    .map(|s| std::mem::replace(s, TimeTagStream::from_sorted_unchecked(ch, Vec::new(), 0)))
                    .ok_or_else(|| Error::Format(format!("{} has no channel {ch}", path.display())))
            };
            let a = take(*channel_a)?;
            let b = take(*channel_b)?;
            Ok((a, b, truth, Vec::new()))
        }
    }
}

/// Squeezing at the true pump power of a simulated run.
fn truth_comparison(record: TruthRecord, cfg: &PipelineConfig) -> Result<TruthComparison> {
    let cavity = derive_cavity_rates(record.omega_c, record.tau_f, record.gamma1 * record.tau_f, cfg.e_nl)?;
    let eta = match cfg.estimation.eta_esc_source {
        EtaEscSource::FromGammas => cavity.gamma1() / cavity.omega_c(),
        EtaEscSource::Explicit(e) => e,
    };
    let p_th = match cfg.estimation.p_th_source {
        PthSource::Measured(p) => p,
        PthSource::FromLosses => cavity.threshold_power(),
    };
    let omega = 2.0 * std::f64::consts::PI * cfg.estimation.frequency_hz / cavity.omega_c();
    let (_, v_plus) = variance_pair(eta, (record.pump_power / p_th).sqrt(), omega);
    let r = 0.5 * v_plus.ln();
    Ok(TruthComparison {
        record,
        r,
        squeezing_db: crate::units::db((-2.0 * r).exp()),
    })
}

/// [`run_pipeline`] that also hands back the normalised histogram.
pub fn run_pipeline_detailed(cfg: &PipelineConfig) -> Result<(Report, CorrelationHistogram)> {
    let (a, b, truth, warnings) = stage("load", load(&cfg.source))?;
    let win = stage("correlate", Window::new(cfg.window.bin_ps, cfg.window.bins, cfg.window.center_ps))?;
    let raw = stage("correlate", correlate(&a, &b, win))?;
    drop((a, b));
    let hist = stage("normalize", normalize_with(&raw, cfg.normalization))?;

    let seed = match cfg.g2_method {
        G2Method::CombFitFrom(p) => Some(p),
        _ => None,
    };
    let comb = stage("fit_comb", fit_comb(&hist, seed, &CombFitOptions::default()))?;
    if !comb.fit.converged {
        return Err(Error::Stage {
            stage: "fit_comb",
            source: Box::new(Error::MaxIterations(comb.fit.iterations)),
        });
    }
    let cavity = stage(
        "derive_cavity_rates",
        derive_cavity_rates(comb.params.omega_c, comb.params.tau_f, cfg.transmission, cfg.e_nl),
    )?;

    let (k, sigma_k, rate_fit) = match &cfg.k {
        KSource::Explicit { value, sigma } => (*value, *sigma, None),
        KSource::RateFit {
            points,
            eta_counting,
            model,
        } => {
            let fit = stage("fit_rate", fit_rate_linear(points, *eta_counting, *model))?;
            (fit.k, fit.sigma_k, Some(fit))
        }
    };

    let (g2_zero, sigma_g2) = match cfg.g2_method {
        G2Method::PeakBin => {
            let g = stage("g2_at_zero", g2_at_zero(&hist, G2Method::PeakBin))?;
            (g.value, g.sigma)
        }
        _ => comb.peak_value(),
    };

    let mut estimate = stage("estimate", estimate_squeezing(g2_zero, &cavity, k, &cfg.estimation))?;

    let inputs = comb_inputs(
        &comb,
        &cavity,
        Measured::new(g2_zero, sigma_g2),
        Measured::new(k, sigma_k),
        cfg.estimation.frequency_hz,
    );
    let uncertainty = stage(
        "propagate_uncertainty",
        propagate_uncertainty(&inputs, &cfg.estimation, cfg.uncertainty.samples, cfg.uncertainty.seed),
    )?;
    estimate.sigma_r = uncertainty.sigma_r;
    estimate.sigma_db = uncertainty.sigma_db;

    let truth = truth.map(|t| stage("truth", truth_comparison(t, cfg))).transpose()?;
    let report = Report {
        r: estimate.r,
        sigma_r: estimate.sigma_r,
        squeezing_db: estimate.squeezing_db,
        sigma_db: estimate.sigma_db,
        g2_zero,
        sigma_g2_zero: sigma_g2,
        gamma1: cavity.gamma1(),
        gamma2: cavity.gamma2(),
        k,
        f: cfg.estimation.frequency_hz,
        eta_esc: estimate.inputs.eta_esc,
        p_th: estimate.inputs.p_th,
        formula_mode: cfg.estimation.formula_mode,
        singles: hist.singles.ok_or(Error::MissingTotals)?,
        coincidences: hist.total_counts(),
        comb_fit: comb,
        cavity,
        rate_fit,
        estimate,
        uncertainty,
        truth,
        warnings,
    };
    Ok((report, hist))
}

/// Uncertain estimator inputs from a comb fit and the cavity derived from
/// it. `gamma1 = T / tau_F` and `gamma2 = Omega_c - gamma1` carry the fit's
/// relative `tau_F` error and its `Omega_c` error; `E_NL` and `f` are exact.
pub fn comb_inputs(comb: &CombFit, cavity: &CavityParams, g2_zero: Measured, k: Measured, f: f64) -> UncertainInputs {
    let tau_f = comb.params.tau_f;
    let sigma_tau_f = comb.sigma("tau_f");
    let gamma1 = cavity.gamma1();
    let sigma_gamma1 = gamma1 * sigma_tau_f / tau_f;
    UncertainInputs {
        g2_zero,
        gamma1: Measured::new(gamma1, sigma_gamma1),
        gamma2: Measured::new(cavity.gamma2(), comb.sigma("omega_c").hypot(sigma_gamma1)),
        length: Measured::new(cavity.length(), SPEED_OF_LIGHT * sigma_tau_f),
        e_nl: Measured::exact(cavity.e_nl()),
        k,
        f: Measured::exact(f),
    }
}

/// Run every stage in order. The first failure aborts with
/// [`Error::Stage`] naming the stage.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Report> {
    run_pipeline_detailed(cfg).map(|(r, _)| r)
}

impl Report {
    /// Short human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "r {:.6e} +- {:.2e}\nsqueezing {:.5} +- {:.5} dB\ng2(0) {:.5} +- {:.5}\n",
            self.r, self.sigma_r, self.squeezing_db, self.sigma_db, self.g2_zero, self.sigma_g2_zero
        );
        s.push_str(&format!(
            "gamma1 {:.4e} s^-1\ngamma2 {:.4e} s^-1\nk {:.4e} s^-1 W^-1\neta_esc {:.4}\np_th {:.4e} W\n",
            self.gamma1, self.gamma2, self.k, self.eta_esc, self.p_th
        ));
        if let Some(t) = &self.truth {
            s.push_str(&format!("truth r {:.6e} ({:.5} dB)\n", t.r, t.squeezing_db));
        }
        s
    }
}
