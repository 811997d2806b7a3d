//! Curve fitting: a generic damped least-squares engine plus the four
//! calibration fits of the measurement chain (comb shape of `g2(tau)`,
//! linear pair rate, `g2(0)` against pump, homodyne variances against pump).

mod comb;
mod linear;
mod lm;
mod variance;

pub use comb::{fit_comb, fit_comb_data, initial_guess_comb, CombFit, CombFitOptions, CombModel};
pub use linear::{fit_g2_hyperbola, fit_rate_linear, G2Point, HyperbolaFit, RateFit, RateModel, RatePoint};
pub use lm::{fit_nonlinear, numeric_gradient, FitOptions, RawFit};
pub use variance::{fit_variance_curve, Quadrature, VarianceFit, VariancePoint};

use serde::{Deserialize, Serialize};

/// A curve `y = f(x; p)`.
pub trait Model {
    fn param_count(&self) -> usize;

    fn value(&self, x: f64, params: &[f64]) -> f64;

    /// `df/dp` at `x`. Defaults to central differences.
    fn gradient(&self, x: f64, params: &[f64], out: &mut [f64]) {
        numeric_gradient(self, x, params, 1e-6, out);
    }
}

/// One observation with its standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    pub sigma: f64,
}

impl DataPoint {
    pub fn new(x: f64, y: f64, sigma: f64) -> Self {
        Self { x, y, sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub value: f64,
    pub sigma: f64,
    pub unit: String,
}

/// Fit outcome in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub parameters: Vec<NamedParam>,
    /// Row-major, same order as `parameters`.
    pub covariance: Vec<Vec<f64>>,
    /// Weighted sum of squared residuals.
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub(crate) fn new(names: &[(&str, &str)], values: &[f64], covariance: Vec<Vec<f64>>, residual_norm: f64, iterations: usize, converged: bool) -> Self {
        let parameters = names
            .iter()
            .zip(values)
            .enumerate()
            .map(|(i, ((name, unit), &value))| NamedParam {
                name: name.to_string(),
                value,
                sigma: covariance[i][i].max(0.0).sqrt(),
                unit: unit.to_string(),
            })
            .collect();
        Self {
            parameters,
            covariance,
            residual_norm,
            iterations,
            converged,
        }
    }

    pub fn get(&self, name: &str) -> Option<&NamedParam> {
        self.parameters.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.parameters.iter().position(|p| p.name == name)
    }

    /// One `name value sigma unit` line per parameter, then the diagnostics.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.parameters {
            s.push_str(&format!("{} {:e} {:e} {}\n", p.name, p.value, p.sigma, p.unit));
        }
        s.push_str(&format!("residual_norm {:e}\n", self.residual_norm));
        s.push_str(&format!("iterations {}\n", self.iterations));
        s.push_str(&format!("converged {}\n", self.converged));
        s
    }
}
