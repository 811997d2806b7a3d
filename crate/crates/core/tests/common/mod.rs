#![allow(dead_code)]

use g2sqz::correlator::{g2_at_zero, CorrelationHistogram, G2Method};
use g2sqz::sim::{SimConfig, TruthRecord};

/// Density of `t_b - t_a` for one detected pair: jittered delta comb with
/// equal Laplace jitter of scale `b` on both detectors.
pub fn pair_delay_density(t: f64, q: f64, tau_f: f64, b: f64) -> f64 {
    let p0 = (1.0 - q) / (1.0 + q);
    (-400i64..=400)
        .map(|n| {
            let u = (t - n as f64 * tau_f).abs();
            p0 * q.powi(n.abs() as i32) * (1.0 + u / b) * (-u / b).exp() / (4.0 * b)
        })
        .sum()
}

/// Noiseless bin-averaged `g2` the simulator would produce on the grid of `h`.
pub fn generative_histogram(h: &CorrelationHistogram, cfg: &SimConfig, t: &TruthRecord) -> CorrelationHistogram {
    let b = cfg.detector_a.jitter_fwhm / (2.0 * std::f64::consts::LN_2);
    let rate = t.pair_rate;
    let signal = rate * cfg.detector_a.efficiency;
    let dilution = (signal / (signal + cfg.detector_a.dark_rate)).powi(2);
    let g2: Vec<f64> = (0..h.counts.len())
        .map(|i| {
            let centre = h.tau(i) - t.tau0;
            let avg = (0..7)
                .map(|j| pair_delay_density(centre + (j as f64 - 3.0) / 7.0 * h.bin_width, t.q, t.tau_f, b))
                .sum::<f64>()
                / 7.0;
            1.0 + dilution * avg / (2.0 * rate)
        })
        .collect();
    let mut exact = h.clone();
    exact.counts = g2.iter().map(|v| (v * 1e4).round() as u64).collect();
    exact.singles = None;
    exact.g2 = Some(g2);
    exact
}

/// Comb-fit peak of the noiseless generative histogram: what a perfect
/// measurement would report given the shape of the fitted formula.
pub fn generative_peak(h: &CorrelationHistogram, cfg: &SimConfig, t: &TruthRecord) -> f64 {
    g2_at_zero(&generative_histogram(h, cfg, t), G2Method::CombFit).unwrap().value
}
