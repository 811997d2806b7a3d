//! Damped least squares.
//!
//! Minimises `chi2(p) = sum_i ((y_i - f(x_i; p)) / sigma_i)^2` with the
//! classic Levenberg schedule: `(J^T J + lambda I) delta = -J^T r`, starting
//! at `lambda = 1e-3 max diag(J^T J)`, dividing by ten after an accepted step
//! and multiplying by ten after a rejected one. Each iteration also tries the
//! undamped step and keeps whichever of the two lowers `chi2` more, so linear
//! problems finish in one step.

use nalgebra::{DMatrix, DVector};

use super::{DataPoint, Model};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop when an accepted step improves chi2 by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop when `|J^T r|_inf` drops below this.
    pub gradient_tolerance: f64,
    /// Use central differences instead of the model's gradient.
    pub numeric_jacobian: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            relative_tolerance: 1e-10,
            gradient_tolerance: 1e-8,
            numeric_jacobian: false,
        }
    }
}

/// Optimiser output in the model's own parameterisation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFit {
    pub params: Vec<f64>,
    /// Inverse of the weighted normal matrix at the optimum.
    pub covariance: DMatrix<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Central-difference gradient with relative step `rel_step` (absolute
/// `rel_step` for parameters that are exactly zero).
pub fn numeric_gradient<M: Model + ?Sized>(model: &M, x: f64, params: &[f64], rel_step: f64, out: &mut [f64]) {
    let mut p = params.to_vec();
    for j in 0..params.len() {
        let h = if params[j] == 0.0 { rel_step } else { rel_step * params[j].abs() };
        p[j] = params[j] + h;
        let up = model.value(x, &p);
        p[j] = params[j] - h;
        let down = model.value(x, &p);
        p[j] = params[j];
        out[j] = (up - down) / (2.0 * h);
    }
}

struct Problem<'a, M: Model + ?Sized> {
    model: &'a M,
    data: Vec<DataPoint>,
    numeric: bool,
}

impl<M: Model + ?Sized> Problem<'_, M> {
    fn chi2(&self, p: &[f64]) -> f64 {
        self.data
            .iter()
            .map(|d| {
                let r = (d.y - self.model.value(d.x, p)) / d.sigma;
                r * r
            })
            .sum()
    }

    /// Normal matrix, gradient `J^T r` (with `r = (f - y)/sigma`) and chi2.
    fn linearize(&self, p: &[f64]) -> (DMatrix<f64>, DVector<f64>, f64) {
        let n = p.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut g = DVector::<f64>::zeros(n);
        let mut chi2 = 0.0;
        let mut row = vec![0.0; n];
        for d in &self.data {
            let w = 1.0 / d.sigma;
            let r = (self.model.value(d.x, p) - d.y) * w;
            if self.numeric {
                numeric_gradient(self.model, d.x, p, 1e-6, &mut row);
            } else {
                self.model.gradient(d.x, p, &mut row);
            }
            row.iter_mut().for_each(|v| *v *= w);
            chi2 += r * r;
            for j in 0..n {
                g[j] += row[j] * r;
                for k in 0..=j {
                    a[(j, k)] += row[j] * row[k];
                }
            }
        }
        for j in 0..n {
            for k in 0..j {
                a[(k, j)] = a[(j, k)];
            }
        }
        (a, g, chi2)
    }
}

fn sort_key(a: &DataPoint, b: &DataPoint) -> std::cmp::Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.sigma.total_cmp(&b.sigma))
}

/// Fit `model` to `data` starting from `init`.
///
/// Data are accumulated in ascending `x`, so any permutation of the input
/// gives a bit-identical result. Running out of iterations is not an error:
/// the best point so far comes back with `converged == false`.
pub fn fit_nonlinear<M: Model + ?Sized>(model: &M, data: &[DataPoint], init: &[f64], opts: &FitOptions) -> Result<RawFit> {
    let n = model.param_count();
    if init.len() != n {
        return Err(Error::invalid("init", format!("expected {n} parameters, got {}", init.len())));
    }
    if data.len() < n {
        return Err(Error::TooFewPoints {
            points: data.len(),
            params: n,
        });
    }
    if let Some(d) = data.iter().find(|d| !(d.sigma > 0.0) || !d.x.is_finite() || !d.y.is_finite()) {
        return Err(Error::invalid("data", format!("bad point {d:?}; sigma must be positive")));
    }
    let mut sorted = data.to_vec();
    sorted.sort_by(sort_key);
    let problem = Problem {
        model,
        data: sorted,
        numeric: opts.numeric_jacobian,
    };
    let scale: f64 = problem.data.iter().map(|d| (d.y / d.sigma).powi(2)).sum::<f64>().max(f64::MIN_POSITIVE);

    let mut p = init.to_vec();
    let (mut a, mut g, mut chi2) = problem.linearize(&p);
    if !chi2.is_finite() {
        return Err(Error::invalid("init", "model is not finite at the starting point"));
    }
    let at_noise_floor = |chi2: f64| chi2 <= f64::EPSILON * f64::EPSILON * scale;
    let mut converged = g.amax() < opts.gradient_tolerance || at_noise_floor(chi2);
    let max_diag = (0..n).map(|j| a[(j, j)]).fold(0.0, f64::max);
    let mut lambda = 1e-3 * max_diag;
    if !(lambda > 0.0) {
        lambda = 1e-3;
    }
    let lambda_ceiling = 1e16 * max_diag.max(1.0);
    let mut iterations = 0;

    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut damped = a.clone();
        for j in 0..n {
            damped[(j, j)] += lambda;
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= 10.0;
            if lambda > lambda_ceiling {
                return Err(Error::SingularJacobian);
            }
            continue;
        };
        let step = chol.solve(&(-&g));
        let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
        let mut trial_chi2 = problem.chi2(&trial);
        // the undamped step too, kept when it does better
        if let Some(gn) = a.clone().cholesky() {
            let step = gn.solve(&(-&g));
            let full: Vec<f64> = p.iter().zip(step.iter()).map(|(x, s)| x + s).collect();
            let full_chi2 = problem.chi2(&full);
            if full_chi2.is_finite() && !(trial_chi2 <= full_chi2) {
                trial = full;
                trial_chi2 = full_chi2;
            }
        }
        if trial_chi2.is_finite() && trial_chi2 < chi2 {
            let improvement = (chi2 - trial_chi2) / chi2;
            p = trial;
            (a, g, chi2) = problem.linearize(&p);
            lambda = (lambda / 10.0).max(f64::MIN_POSITIVE);
            if improvement < opts.relative_tolerance || g.amax() < opts.gradient_tolerance || at_noise_floor(chi2) {
                converged = true;
            }
        } else {
            lambda *= 10.0;
            if lambda > lambda_ceiling {
                // no downhill step of any length: we sit on the minimum to
                // within rounding
                converged = true;
            }
        }
    }

    let singular = a.clone().singular_values();
    let (smax, smin) = (singular.max(), singular.min());
    if !(smin > 1e-13 * smax) {
        return Err(Error::SingularJacobian);
    }
    let covariance = a.clone().try_inverse().ok_or(Error::SingularJacobian)?;
    if (0..n).any(|j| !(covariance[(j, j)] >= 0.0) || !covariance[(j, j)].is_finite()) {
        return Err(Error::SingularJacobian);
    }
    // the normal-matrix inverse can lose exact symmetry in the last bit
    let covariance = (&covariance + covariance.transpose()) * 0.5;
    Ok(RawFit {
        params: p,
        covariance,
        chi2,
        iterations,
        converged,
        gradient_norm: g.amax(),
    })
}
