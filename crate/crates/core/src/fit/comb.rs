use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use super::{fit_nonlinear, DataPoint, FitOptions, FitResult, Model};
use crate::correlator::CorrelationHistogram;
use crate::error::{Error, Result};
use crate::opo::{active_modes, comb_model_eval, CombModelParams};

/// `x` solving `(1 + x) e^{-x} = 1/2`: the comb kernel's half width in
/// units of `1/a`.
const KERNEL_HALF_WIDTH: f64 = 1.678_346_990_016_660_7;

/// Comb model over natural parameters `[n1, n2, omega_c, tau0, tau_r, tau_f]`
/// (SI units, `x` in seconds).
#[derive(Debug, Clone, Copy, Default)]
pub struct CombModel {
    /// Mode-sum bound; `None` picks [`CombModelParams::default_n_max`].
    pub n_max: Option<usize>,
}

impl CombModel {
    fn params(p: &[f64]) -> CombModelParams {
        CombModelParams {
            n1: p[0],
            n2: p[1],
            omega_c: p[2],
            tau0: p[3],
            tau_r: p[4],
            tau_f: p[5],
        }
    }

    fn bound(&self, p: &CombModelParams) -> usize {
        self.n_max.unwrap_or_else(|| p.default_n_max())
    }
}

impl Model for CombModel {
    fn param_count(&self) -> usize {
        6
    }

    fn value(&self, x: f64, p: &[f64]) -> f64 {
        let params = Self::params(p);
        comb_model_eval(&params, x, self.bound(&params))
    }

    /// Analytic derivatives. At `tau = tau0` the envelope's kink takes the
    /// right-hand branch.
    fn gradient(&self, x: f64, p: &[f64], out: &mut [f64]) {
        let c = Self::params(p);
        let a = c.kernel_rate();
        let d = x - c.tau0;
        let envelope = (-c.omega_c * d.abs()).exp();
        let (mut s, mut s_shift, mut s_sq, mut s_n) = (0.0, 0.0, 0.0, 0.0);
        if envelope > 0.0 {
            for n in active_modes(d, a, c.tau_f, self.bound(&c)) {
                let u = d - n as f64 * c.tau_f;
                let e = (-a * u.abs()).exp();
                s += (1.0 + a * u.abs()) * e;
                s_shift += u * e;
                s_sq += u * u * e;
                s_n += n as f64 * u * e;
            }
        }
        let a2 = a * a;
        let sign = if d >= 0.0 { 1.0 } else { -1.0 };
        out[0] = c.n2 + envelope * s;
        out[1] = c.n1;
        out[2] = -c.n1 * d.abs() * envelope * s;
        out[3] = c.n1 * envelope * (c.omega_c * sign * s + a2 * s_shift);
        out[4] = c.n1 * envelope * a2 / c.tau_r * s_sq;
        out[5] = c.n1 * envelope * a2 * s_n;
    }
}

const NS: f64 = 1e-9;

/// Optimiser-side parameterisation: `[ln n1, n2, ln(omega_c ns), tau0/ns,
/// ln(tau_r/ns), ln(tau_f/ns)]` with `x` in ns. Logs keep the positive
/// parameters positive; nanoseconds keep everything of order one.
struct Scaled(CombModel);

impl Scaled {
    fn natural(theta: &[f64]) -> [f64; 6] {
        [
            theta[0].exp(),
            theta[1],
            theta[2].exp() / NS,
            theta[3] * NS,
            theta[4].exp() * NS,
            theta[5].exp() * NS,
        ]
    }

    fn internal(p: &CombModelParams) -> [f64; 6] {
        [
            p.n1.ln(),
            p.n2,
            (p.omega_c * NS).ln(),
            p.tau0 / NS,
            (p.tau_r / NS).ln(),
            (p.tau_f / NS).ln(),
        ]
    }

    /// `d natural / d theta` (diagonal).
    fn chain(natural: &[f64; 6]) -> [f64; 6] {
        [natural[0], 1.0, natural[2], NS, natural[4], natural[5]]
    }
}

impl Model for Scaled {
    fn param_count(&self) -> usize {
        6
    }

    fn value(&self, x: f64, theta: &[f64]) -> f64 {
        self.0.value(x * NS, &Self::natural(theta))
    }

    fn gradient(&self, x: f64, theta: &[f64], out: &mut [f64]) {
        let p = Self::natural(theta);
        self.0.gradient(x * NS, &p, out);
        for (o, c) in out.iter_mut().zip(Self::chain(&p)) {
            *o *= c;
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CombFitOptions {
    pub fit: FitOptions,
    pub n_max: Option<usize>,
}

/// Comb fit result in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombFit {
    pub params: CombModelParams,
    pub fit: FitResult,
}

pub(crate) const COMB_NAMES: [(&str, &str); 6] = [
    ("n1", "1"),
    ("n2", "1"),
    ("omega_c", "s^-1"),
    ("tau0", "s"),
    ("tau_r", "s"),
    ("tau_f", "s"),
];

impl CombFit {
    /// `N1 (N2 + 1)` and its standard deviation from the covariance.
    pub fn peak_value(&self) -> (f64, f64) {
        let p = &self.params;
        let c = &self.fit.covariance;
        let (d1, d2) = (p.n2 + 1.0, p.n1);
        let var = d1 * d1 * c[0][0] + d2 * d2 * c[1][1] + 2.0 * d1 * d2 * c[0][1];
        (p.peak_value(), var.max(0.0).sqrt())
    }

    pub fn sigma(&self, name: &str) -> f64 {
        self.fit.get(name).map_or(f64::NAN, |p| p.sigma)
    }
}

/// Weighted comb fit on arbitrary `(tau, g2, sigma)` data, `tau` in seconds.
pub fn fit_comb_data(data: &[DataPoint], init: &CombModelParams, opts: &CombFitOptions) -> Result<CombFit> {
    init.validate()?;
    let model = Scaled(CombModel { n_max: opts.n_max });
    let scaled: Vec<DataPoint> = data.iter().map(|d| DataPoint::new(d.x / NS, d.y, d.sigma)).collect();
    let raw = fit_nonlinear(&model, &scaled, &Scaled::internal(init), &opts.fit)?;
    let natural = Scaled::natural(&raw.params);
    let chain = Scaled::chain(&natural);
    let cov: Vec<Vec<f64>> = (0..6)
        .map(|i| (0..6).map(|j| chain[i] * raw.covariance[(i, j)] * chain[j]).collect())
        .collect();
    let params = CombModel::params(&natural);
    Ok(CombFit {
        params,
        fit: FitResult::new(&COMB_NAMES, &natural, cov, raw.chi2, raw.iterations, raw.converged),
    })
}

/// Histogram bins as fit data with Poisson errors, `sigma_i = g2_i /
/// sqrt(counts_i)`, floored at one count.
pub(crate) fn histogram_data(hist: &CorrelationHistogram) -> Result<Vec<DataPoint>> {
    let g2 = hist.g2.as_ref().ok_or(Error::NotNormalized)?;
    let per_count = hist.g2_per_count().ok_or(Error::MissingTotals)?;
    Ok(hist
        .taus()
        .zip(g2)
        .zip(&hist.counts)
        .map(|((tau, &y), &c)| DataPoint::new(tau, y, per_count * (c.max(1) as f64).sqrt()))
        .collect())
}

/// Full weighted comb fit of a normalised histogram, starting from `init` or
/// from [`initial_guess_comb`].
pub fn fit_comb(hist: &CorrelationHistogram, init: Option<CombModelParams>, opts: &CombFitOptions) -> Result<CombFit> {
    let data = histogram_data(hist)?;
    let init = match init {
        Some(p) => p,
        None => initial_guess_comb(hist)?,
    };
    fit_comb_data(&data, &init, opts)
}

fn least_squares_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

/// Starting point for [`fit_comb`] read off the histogram.
///
/// Baseline from the outer tenth of the window on each side, delay and
/// resolution from the tallest peak, spacing from the local maxima and
/// linewidth from the decay of the peak heights.
pub fn initial_guess_comb(hist: &CorrelationHistogram) -> Result<CombModelParams> {
    let g = hist.g2.as_ref().ok_or(Error::NotNormalized)?;
    let n = g.len();
    if n < 10 {
        return Err(Error::NoCombDetected(format!("only {n} bins")));
    }
    let w = hist.bin_width;
    let edge = (n / 10).max(1);
    let baseline = (g[..edge].iter().sum::<f64>() + g[n - edge..].iter().sum::<f64>()) / (2 * edge) as f64;
    let (imax, &top) = g.iter().enumerate().max_by(|x, y| x.1.total_cmp(y.1)).unwrap();
    if !(top > 0.0) || top < 2.0 * baseline {
        return Err(Error::NoCombDetected(format!(
            "peak {top:.4} is less than twice the baseline {baseline:.4}"
        )));
    }

    // sub-bin peak position from a parabola through the top three bins
    let mut tau0 = hist.tau(imax);
    if imax > 0 && imax + 1 < n {
        let (l, c, r) = (g[imax - 1], g[imax], g[imax + 1]);
        let denom = l - 2.0 * c + r;
        if denom < 0.0 {
            tau0 += 0.5 * (l - r) / denom * w;
        }
    }

    let half = baseline + 0.5 * (top - baseline);
    let crossing = |dir: isize| -> Option<f64> {
        let mut i = imax as isize;
        loop {
            let j = i + dir;
            if j < 0 || j >= n as isize {
                return None;
            }
            let (gi, gj) = (g[i as usize], g[j as usize]);
            if gj < half {
                let frac = (gi - half) / (gi - gj);
                return Some((i as f64 + dir as f64 * frac) * w);
            }
            i = j;
        }
    };
    let (Some(left), Some(right)) = (crossing(-1), crossing(1)) else {
        return Err(Error::NoCombDetected("central peak runs into the window edge".into()));
    };
    let fwhm = right - left;
    let tau_r = fwhm * LN_2 / KERNEL_HALF_WIDTH;

    let reach = ((fwhm / w).round() as usize).max(1);
    let threshold = if baseline > 0.0 { 1.5 * baseline } else { 0.05 * top };
    let maxima: Vec<usize> = (0..n)
        .filter(|&i| {
            g[i] > threshold
                && (i.saturating_sub(reach)..i).all(|j| g[j] < g[i])
                && (i + 1..(i + reach + 1).min(n)).all(|j| g[j] <= g[i])
        })
        .collect();
    if maxima.len() < 3 {
        return Err(Error::NoCombDetected(format!("{} local maxima above 1.5x baseline", maxima.len())));
    }
    let mut gaps: Vec<f64> = maxima.windows(2).map(|m| (m[1] - m[0]) as f64 * w).collect();
    gaps.sort_by(f64::total_cmp);
    let rough_spacing = gaps[gaps.len() / 2];

    // assign comb indices, keep the tallest maximum per index
    let mut peaks: Vec<(i64, f64, f64)> = Vec::new();
    for &i in &maxima {
        let pos = hist.tau(i);
        let idx = ((pos - tau0) / rough_spacing).round() as i64;
        match peaks.iter_mut().find(|p| p.0 == idx) {
            Some(p) if p.2 < g[i] => *p = (idx, pos, g[i]),
            Some(_) => {}
            None => peaks.push((idx, pos, g[i])),
        }
    }
    let line: Vec<(f64, f64)> = peaks.iter().map(|p| (p.0 as f64, p.1)).collect();
    let tau_f = match least_squares_line(&line) {
        Some((slope, _)) if slope > 0.0 => slope,
        _ => rough_spacing,
    };

    let excess_top = top - baseline;
    let decay: Vec<(f64, f64)> = peaks
        .iter()
        .filter(|p| p.2 - baseline > 0.1 * excess_top)
        .map(|p| ((p.0 as f64 * tau_f).abs(), (p.2 - baseline).ln()))
        .collect();
    let omega_c = match least_squares_line(&decay) {
        Some((slope, _)) if slope < 0.0 => -slope,
        _ => {
            return Err(Error::NoCombDetected("peak heights do not decay".into()));
        }
    };

    let n1 = excess_top;
    let n2 = (baseline / n1).max(0.0);
    CombModelParams::new(n1, n2, omega_c, tau0, tau_r, tau_f).map_err(|e| Error::NoCombDetected(e.to_string()))
}
