//! Hanbury-Brown–Twiss cross-correlation of two time-tag streams.
//!
//! Delays are `tau = t_b - t_a`. Bins are half-open, `[lo + i w, lo + (i+1) w)`,
//! with `lo = centre - num_bins * w / 2` (integer picoseconds throughout).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_comb, CombFitOptions};
use crate::opo::CombModelParams;
use crate::tags::{first_unsorted, TimeTagStream};
use crate::units::{ps_to_seconds, PS_PER_S};

/// Singles totals needed to normalise a histogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Singles {
    pub n_a: u64,
    pub n_b: u64,
    /// s.
    pub acquisition_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationHistogram {
    /// s.
    pub bin_width: f64,
    /// Centre of the first bin, s.
    pub tau_min: f64,
    pub counts: Vec<u64>,
    pub singles: Option<Singles>,
    pub g2: Option<Vec<f64>>,
}

impl CorrelationHistogram {
    pub fn num_bins(&self) -> usize {
        self.counts.len()
    }

    /// Centre of bin `i`, s.
    pub fn tau(&self, i: usize) -> f64 {
        self.tau_min + i as f64 * self.bin_width
    }

    pub fn taus(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_bins()).map(|i| self.tau(i))
    }

    pub fn total_counts(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn is_normalized(&self) -> bool {
        self.g2.is_some()
    }

    /// `g2` per count, the constant relating the two columns. Taken from the
    /// columns themselves when normalised, else from the singles.
    pub fn g2_per_count(&self) -> Option<f64> {
        if let Some(g2) = &self.g2 {
            let total = self.total_counts();
            if total > 0 {
                return Some(g2.iter().sum::<f64>() / total as f64);
            }
        }
        let s = self.singles?;
        if s.n_a > 0 && s.n_b > 0 && s.acquisition_time > 0.0 {
            return Some(s.acquisition_time / (s.n_a as f64 * s.n_b as f64 * self.bin_width));
        }
        None
    }
}

/// Window geometry in integer picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub bin_width_ps: u64,
    pub num_bins: usize,
    pub centre_ps: i64,
}

impl Window {
    pub fn new(bin_width_ps: u64, num_bins: usize, centre_ps: i64) -> Result<Self> {
        if bin_width_ps == 0 {
            return Err(Error::invalid("bin_width", "must be at least 1 ps"));
        }
        if num_bins == 0 {
            return Err(Error::invalid("num_bins", "must be at least 1"));
        }
        if (num_bins as u128) * (bin_width_ps as u128) > i64::MAX as u128 / 4 {
            return Err(Error::invalid("num_bins", "window too wide"));
        }
        Ok(Self {
            bin_width_ps,
            num_bins,
            centre_ps,
        })
    }

    /// 4000 bins of 35 ps around zero delay.
    pub fn default_hbt() -> Self {
        Self {
            bin_width_ps: 35,
            num_bins: 4000,
            centre_ps: 0,
        }
    }

    fn span(&self) -> i64 {
        self.num_bins as i64 * self.bin_width_ps as i64
    }

    /// Left edge of the first bin.
    pub fn lo_ps(&self) -> i64 {
        self.centre_ps - self.span().div_euclid(2)
    }

    pub fn hi_ps(&self) -> i64 {
        self.lo_ps() + self.span()
    }
}

fn check_stream(s: &TimeTagStream) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptyStream(s.channel()));
    }
    if let Some(i) = first_unsorted(s.timestamps()) {
        return Err(Error::UnsortedInput {
            channel: s.channel(),
            index: i,
        });
    }
    Ok(())
}

/// Two-pointer sweep over `a`, accumulating into `counts`. `start` is the
/// first index of `b` that can still fall into the window of `a[0]`.
fn sweep(a: &[u64], b: &[u64], mut start: usize, win: &Window, counts: &mut [u64]) {
    let lo = win.lo_ps();
    let hi = win.hi_ps();
    let w = win.bin_width_ps as i64;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && (b[start] as i64) - ta < lo {
            start += 1;
        }
        for &tb in &b[start..] {
            let d = tb as i64 - ta;
            if d >= hi {
                break;
            }
            counts[((d - lo) / w) as usize] += 1;
        }
    }
}

fn first_candidate(b: &[u64], ta: u64, lo: i64) -> usize {
    let ta = ta as i64;
    b.partition_point(|&tb| (tb as i64) - ta < lo)
}

fn assemble(a: &TimeTagStream, b: &TimeTagStream, win: &Window, counts: Vec<u64>) -> CorrelationHistogram {
    let w = ps_to_seconds(win.bin_width_ps as f64);
    CorrelationHistogram {
        bin_width: w,
        tau_min: ps_to_seconds(win.lo_ps() as f64) + 0.5 * w,
        counts,
        singles: Some(Singles {
            n_a: a.len() as u64,
            n_b: b.len() as u64,
            acquisition_time: a.duration_ps().max(b.duration_ps()) as f64 / PS_PER_S,
        }),
        g2: None,
    }
}

/// Single-threaded histogram of `t_b - t_a`.
pub fn correlate_serial(a: &TimeTagStream, b: &TimeTagStream, win: Window) -> Result<CorrelationHistogram> {
    check_stream(a)?;
    check_stream(b)?;
    let mut counts = vec![0u64; win.num_bins];
    sweep(a.timestamps(), b.timestamps(), 0, &win, &mut counts);
    Ok(assemble(a, b, &win, counts))
}

const PARALLEL_CHUNK: usize = 1 << 18;

/// Histogram of `t_b - t_a`. Large inputs are split into slices of `a`
/// swept in parallel; integer counts make the merge exact, so the result is
/// identical to [`correlate_serial`].
pub fn correlate(a: &TimeTagStream, b: &TimeTagStream, win: Window) -> Result<CorrelationHistogram> {
    if a.len() < 2 * PARALLEL_CHUNK {
        return correlate_serial(a, b, win);
    }
    check_stream(a)?;
    check_stream(b)?;
    let bt = b.timestamps();
    let lo = win.lo_ps();
    let counts = a
        .timestamps()
        .par_chunks(PARALLEL_CHUNK)
        .map(|chunk| {
            let mut local = vec![0u64; win.num_bins];
            sweep(chunk, bt, first_candidate(bt, chunk[0], lo), &win, &mut local);
            local
        })
        .reduce(
            || vec![0u64; win.num_bins],
            |mut x, y| {
                x.iter_mut().zip(&y).for_each(|(p, q)| *p += q);
                x
            },
        );
    Ok(assemble(a, b, &win, counts))
}

/// How to turn counts into `g2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `counts * T / (n_a n_b w)`, the accidental-coincidence level.
    #[default]
    Singles,
    /// Scale so that bins with `|tau - centre| >= min_delay` average to one.
    Tail { min_delay: f64 },
}

/// Fill `g2` from the singles totals. Idempotent.
pub fn normalize(hist: &CorrelationHistogram) -> Result<CorrelationHistogram> {
    let s = hist.singles.ok_or(Error::MissingTotals)?;
    if s.n_a == 0 || s.n_b == 0 || !(s.acquisition_time > 0.0) {
        return Err(Error::MissingTotals);
    }
    let scale = s.acquisition_time / (s.n_a as f64 * s.n_b as f64 * hist.bin_width);
    let mut out = hist.clone();
    out.g2 = Some(hist.counts.iter().map(|&c| c as f64 * scale).collect());
    Ok(out)
}

pub fn normalize_with(hist: &CorrelationHistogram, how: Normalization) -> Result<CorrelationHistogram> {
    match how {
        Normalization::Singles => normalize(hist),
        Normalization::Tail { min_delay } => {
            let centre = hist.tau_min + 0.5 * (hist.num_bins() - 1) as f64 * hist.bin_width;
            let (sum, n) = hist
                .counts
                .iter()
                .enumerate()
                .filter(|(i, _)| (hist.tau(*i) - centre).abs() >= min_delay)
                .fold((0u64, 0usize), |(s, n), (_, &c)| (s + c, n + 1));
            if n == 0 || sum == 0 {
                return Err(Error::invalid("min_delay", "no populated bins in the tail"));
            }
            let scale = n as f64 / sum as f64;
            let mut out = hist.clone();
            out.g2 = Some(hist.counts.iter().map(|&c| c as f64 * scale).collect());
            Ok(out)
        }
    }
}

/// Zero-delay estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum G2Method {
    /// Tallest bin.
    PeakBin,
    /// `N1 (N2 + 1)` from a comb fit, optionally seeded.
    #[default]
    CombFit,
    CombFitFrom(CombModelParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Zero {
    pub value: f64,
    pub sigma: f64,
    /// Comb parameters when a fit was used.
    pub comb: Option<CombModelParams>,
}

/// `g2(0)` with its statistical uncertainty.
pub fn g2_at_zero(hist: &CorrelationHistogram, method: G2Method) -> Result<G2Zero> {
    let g2 = hist.g2.as_ref().ok_or(Error::NotNormalized)?;
    match method {
        G2Method::PeakBin => {
            let (i, &value) = g2
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .ok_or(Error::NotNormalized)?;
            let c = hist.counts[i].max(1) as f64;
            Ok(G2Zero {
                value,
                sigma: value / c.sqrt(),
                comb: None,
            })
        }
        G2Method::CombFit | G2Method::CombFitFrom(_) => {
            let init = match method {
                G2Method::CombFitFrom(p) => Some(p),
                _ => None,
            };
            let fit = fit_comb(hist, init, &CombFitOptions::default())?;
            let (value, sigma) = fit.peak_value();
            Ok(G2Zero {
                value,
                sigma,
                comb: Some(fit.params),
            })
        }
    }
}
