use serde::{Deserialize, Serialize};

use super::{fit_nonlinear, DataPoint, FitOptions, FitResult, Model};
use crate::error::{Error, Result};
use crate::opo::{AnalysisFrequency, CavityParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Anti-squeezed, `V+`.
    Plus,
    /// Squeezed, `V-`.
    Minus,
}

/// Detected homodyne variance at one pump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariancePoint {
    /// W.
    pub pump_power: f64,
    pub quadrature: Quadrature,
    /// Shot-noise units.
    pub variance: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceFit {
    /// W.
    pub p_th: f64,
    pub sigma_p_th: f64,
    pub eta_det: f64,
    pub sigma_eta_det: f64,
    pub fit: FitResult,
}

/// Detected variance with parameters `[ln P_th, eta_det]`. The abscissa is
/// `+P` for the anti-squeezed quadrature and `-P` for the squeezed one.
struct VarianceModel {
    eta_esc: f64,
    /// `4 Omega^2`.
    w: f64,
}

impl VarianceModel {
    fn shape(&self, x: f64, ln_pth: f64) -> (f64, f64, f64) {
        let sign = x.signum();
        let ratio = (x.abs() / ln_pth.exp()).sqrt();
        let one = 1.0 - sign * ratio;
        (sign, ratio, one * one + self.w)
    }
}

impl Model for VarianceModel {
    fn param_count(&self) -> usize {
        2
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let (sign, ratio, denom) = self.shape(x, p[0]);
        1.0 + sign * p[1] * self.eta_esc * 4.0 * ratio / denom
    }

    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let (sign, ratio, denom) = self.shape(x, p[0]);
        let eta = p[1] * self.eta_esc;
        // dV/dx_ratio = +-4 eta (1 - x^2 + 4 Omega^2) / denom^2, dx/dlnP_th = -x/2
        let dv_dratio = sign * 4.0 * eta * (1.0 - ratio * ratio + self.w) / (denom * denom);
        out[0] = -0.5 * ratio * dv_dratio;
        out[1] = sign * self.eta_esc * 4.0 * ratio / denom;
    }
}

/// Joint fit of threshold power and homodyne efficiency to detected
/// variances at fixed analysis frequency and escape efficiency.
pub fn fit_variance_curve(
    points: &[VariancePoint],
    cavity: &CavityParams,
    freq: AnalysisFrequency,
    eta_esc: f64,
    opts: &FitOptions,
) -> Result<VarianceFit> {
    if !(eta_esc > 0.0 && eta_esc <= 1.0) {
        return Err(Error::InvalidFraction {
            name: "eta_esc",
            value: eta_esc,
        });
    }
    if let Some(p) = points.iter().find(|p| !(p.pump_power > 0.0)) {
        return Err(Error::ZeroPump(p.pump_power));
    }
    let omega = freq.normalized(cavity);
    let model = VarianceModel {
        eta_esc,
        w: 4.0 * omega * omega,
    };
    let data: Vec<DataPoint> = points
        .iter()
        .map(|p| {
            let x = match p.quadrature {
                Quadrature::Plus => p.pump_power,
                Quadrature::Minus => -p.pump_power,
            };
            DataPoint::new(x, p.variance, p.sigma)
        })
        .collect();
    let p_max = points.iter().map(|p| p.pump_power).fold(0.0, f64::max);

    // coarse scan over the threshold with the efficiency solved exactly
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..400 {
        let ln_pth = (p_max * 1.001).ln() + i as f64 * (1e4f64).ln() / 399.0;
        let (mut num, mut den) = (0.0, 0.0);
        for d in &data {
            let g = model.value(d.x, &[ln_pth, 1.0]) - 1.0;
            let w = 1.0 / (d.sigma * d.sigma);
            num += w * g * (d.y - 1.0);
            den += w * g * g;
        }
        let eta = if den > 0.0 { num / den } else { 0.0 };
        let chi2: f64 = data
            .iter()
            .map(|d| ((d.y - model.value(d.x, &[ln_pth, eta])) / d.sigma).powi(2))
            .sum();
        if chi2 < best.0 {
            best = (chi2, ln_pth, eta);
        }
    }

    let raw = fit_nonlinear(&model, &data, &[best.1, best.2], opts)?;
    let p_th = raw.params[0].exp();
    let eta_det = raw.params[1];
    let cov = vec![
        vec![p_th * p_th * raw.covariance[(0, 0)], p_th * raw.covariance[(0, 1)]],
        vec![p_th * raw.covariance[(1, 0)], raw.covariance[(1, 1)]],
    ];
    let fit = FitResult::new(&[("p_th", "W"), ("eta_det", "1")], &[p_th, eta_det], cov, raw.chi2, raw.iterations, raw.converged);
    Ok(VarianceFit {
        p_th,
        sigma_p_th: fit.parameters[0].sigma,
        eta_det,
        sigma_eta_det: fit.parameters[1].sigma,
        fit,
    })
}
