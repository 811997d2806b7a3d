//! Weak squeezing of a below-threshold optical parametric oscillator inferred
//! from photon-pair statistics.
//!
//! The crate covers the whole measurement chain: the closed-form cavity
//! model ([`opo`]), a time-tag simulator ([`sim`]), the coincidence
//! correlator ([`correlator`]), curve fits ([`fit`]), the squeezing estimate
//! with Monte Carlo uncertainty ([`estimator`]) and the end-to-end
//! [`pipeline`]. File formats live in [`io`].

pub mod correlator;
pub mod error;
pub mod estimator;
pub mod figures;
pub mod fit;
pub mod io;
pub mod opo;
pub mod pipeline;
pub mod sim;
pub mod tags;
pub mod units;

pub use correlator::{
    correlate, correlate_serial, g2_at_zero, normalize, normalize_with, CorrelationHistogram, G2Method, G2Zero,
    Normalization, Singles, Window,
};
pub use error::{Error, Result};
pub use estimator::{
    estimate_squeezing, propagate_uncertainty, EstimationConfig, EtaEscSource, FormulaMode, Measured, PthSource,
    SqueezingEstimate, UncertainInputs, Uncertainty,
};
pub use opo::{
    comb_model_eval, derive_cavity_rates, detected_variances, g2zero_from_pump, pump_from_g2zero, quadrature_variances,
    threshold_power, AnalysisFrequency, CavityParams, CombModelParams, DetectionEfficiencyHD, PumpCalibration,
    QuadratureVariances,
};
pub use pipeline::{run_pipeline, PipelineConfig, Report};
pub use sim::{simulate, DetectorModel, SimConfig, SimOutput, TruthRecord};
pub use tags::TimeTagStream;
