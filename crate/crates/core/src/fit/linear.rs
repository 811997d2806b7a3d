use serde::{Deserialize, Serialize};

use super::FitResult;
use crate::error::{Error, Result};

/// Measured coincidence-free singles rate at one pump power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    /// W.
    pub pump_power: f64,
    /// s^-1.
    pub measured_rate: f64,
    /// s^-1.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// `R = k P`.
    #[default]
    ThroughOrigin,
    /// `R = k P + b`.
    WithOffset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// s^-1 W^-1.
    pub k: f64,
    pub sigma_k: f64,
    pub fit: FitResult,
}

/// `(P, g2(0), sigma)` triple.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Point {
    pub pump_power: f64,
    pub g2zero: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperbolaFit {
    /// W.
    pub a: f64,
    pub sigma_a: f64,
    /// `gamma1 / (2k)` when the cavity and calibration were supplied.
    pub a_pred: Option<f64>,
    pub fit: FitResult,
}

/// Weighted least squares for `y = s x (+ b)`, accumulated in ascending `x`.
/// Returns `(values, covariance, chi2)`.
fn weighted_line(mut pts: Vec<(f64, f64, f64)>, offset: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>, f64)> {
    let needed = if offset { 2 } else { 1 };
    if pts.len() < needed.max(2) {
        return Err(Error::TooFewPoints {
            points: pts.len(),
            params: needed,
        });
    }
    for &(x, y, s) in &pts {
        if !(s > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::invalid("sigma", format!("need finite data and sigma > 0, got ({x}, {y}, {s})")));
        }
    }
    pts.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)).then(p.2.total_cmp(&q.2)));
    if pts.iter().all(|p| p.0 == pts[0].0) {
        return Err(Error::DegenerateDesign(format!("all {} points share x = {}", pts.len(), pts[0].0)));
    }
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, s) in &pts {
        let w = 1.0 / (s * s);
        sw += w;
        sx += w * x;
        sy += w * y;
        sxx += w * x * x;
        sxy += w * x * y;
    }
    let (values, cov) = if offset {
        let det = sw * sxx - sx * sx;
        if !(det > 0.0) {
            return Err(Error::DegenerateDesign("singular normal matrix".into()));
        }
        let slope = (sw * sxy - sx * sy) / det;
        let b = (sxx * sy - sx * sxy) / det;
        (vec![slope, b], vec![vec![sw / det, -sx / det], vec![-sx / det, sxx / det]])
    } else {
        (vec![sxy / sxx], vec![vec![1.0 / sxx]])
    };
    let chi2 = pts
        .iter()
        .map(|&(x, y, s)| {
            let model = values[0] * x + if offset { values[1] } else { 0.0 };
            ((y - model) / s).powi(2)
        })
        .sum();
    Ok((values, cov, chi2))
}

/// Linear calibration `R = R_meas / eta_counting` against pump power.
pub fn fit_rate_linear(points: &[RatePoint], eta_counting: f64, model: RateModel) -> Result<RateFit> {
    if !(eta_counting > 0.0 && eta_counting <= 1.0) {
        return Err(Error::InvalidFraction {
            name: "eta_counting",
            value: eta_counting,
        });
    }
    for p in points {
        if !(p.pump_power > 0.0) || !(p.measured_rate >= 0.0) {
            return Err(Error::invalid("rate point", format!("{p:?}")));
        }
    }
    let pts = points
        .iter()
        .map(|p| (p.pump_power, p.measured_rate / eta_counting, p.sigma / eta_counting))
        .collect();
    let offset = model == RateModel::WithOffset;
    let (values, cov, chi2) = weighted_line(pts, offset)?;
    let names: &[(&str, &str)] = if offset { &[("k", "s^-1 W^-1"), ("offset", "s^-1")] } else { &[("k", "s^-1 W^-1")] };
    let fit = FitResult::new(names, &values, cov, chi2, 1, true);
    Ok(RateFit {
        k: values[0],
        sigma_k: fit.parameters[0].sigma,
        fit,
    })
}

/// Fit `g2(0) = 2 + a / P`. With `prediction = Some((gamma1, k))` the
/// expected `a = gamma1 / (2k)` is reported alongside.
pub fn fit_g2_hyperbola(points: &[G2Point], prediction: Option<(f64, f64)>) -> Result<HyperbolaFit> {
    for p in points {
        if !(p.pump_power > 0.0) {
            return Err(Error::ZeroPump(p.pump_power));
        }
    }
    let pts = points.iter().map(|p| (1.0 / p.pump_power, p.g2zero - 2.0, p.sigma)).collect();
    let (values, cov, chi2) = weighted_line(pts, false)?;
    let fit = FitResult::new(&[("a", "W")], &values, cov, chi2, 1, true);
    Ok(HyperbolaFit {
        a: values[0],
        sigma_a: fit.parameters[0].sigma,
        a_pred: prediction.map(|(gamma1, k)| gamma1 / (2.0 * k)),
        fit,
    })
}
