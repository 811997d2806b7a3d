//! Monte Carlo generator of two-channel photon time-tag streams.
//!
//! Pairs are emitted as a homogeneous Poisson process. The two photons of a
//! pair are separated by a whole number of cavity round trips, `n tau_F`,
//! with `Pr(n) ∝ q^|n|`, `q = e^{-Oc tau_F}`. Each photon is routed through a
//! beam splitter independently and then passes a detector model with
//! efficiency, Laplace timing jitter, dark counts and dead time. Correlating
//! the two outputs gives the comb-shaped `g2(tau)` with peak kernel
//! `(1 + a|t|) e^{-a|t|}`, which is the self-convolution of the Laplace jitter.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opo::{derive_cavity_rates, CavityParams};
use crate::tags::TimeTagStream;
use crate::units::{self, PS_PER_S};

/// Acquisition time generated per emission slice, s.
const EMISSION_SLICE: f64 = 0.01;
/// Tags passed through a detector per random stream.
const DETECTOR_CHUNK: usize = 1 << 18;

/// Single-photon detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Detection probability, including everything in front of the detector.
    pub efficiency: f64,
    /// Dark count rate, s^-1.
    pub dark_rate: f64,
    /// Non-paralysable dead time, s.
    pub dead_time: f64,
    /// FWHM of the two-sided exponential timing jitter, s.
    pub jitter_fwhm: f64,
}

impl DetectorModel {
    pub fn ideal() -> Self {
        Self {
            efficiency: 1.0,
            dark_rate: 0.0,
            dead_time: 0.0,
            jitter_fwhm: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency >= 0.0 && self.efficiency <= 1.0) {
            return Err(Error::ConfigInvalid(format!("detector efficiency {} not in [0, 1]", self.efficiency)));
        }
        for (name, v) in [("dark_rate", self.dark_rate), ("dead_time", self.dead_time), ("jitter_fwhm", self.jitter_fwhm)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!("detector {name} {v} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Laplace scale `b` (s): density `e^{-|t|/b} / 2b`, FWHM `2 b ln2`.
    pub fn jitter_scale(&self) -> f64 {
        self.jitter_fwhm / (2.0 * LN_2)
    }

    /// Per-detector jitter FWHM for which the simulated zero-delay peak obeys
    /// `g2(0) - 1 = gamma1 / (2R)`, i.e. carries the same `1/P` term as the
    /// closed-form pump relation. Both detectors are assumed identical.
    pub fn pump_relation_jitter(cavity: &CavityParams) -> f64 {
        let law = ModeOffsetLaw::for_cavity(cavity);
        let tau_f = cavity.tau_f();
        let target = cavity.gamma1();
        // the central peak alone gives a first guess; bisect in log scale
        // to account for the neighbouring peaks
        let guess = 2.0 * LN_2 * law.p_zero() / (4.0 * target);
        let (mut lo, mut hi) = (0.1 * guess, 10.0 * guess);
        for _ in 0..200 {
            let mid = (lo * hi).sqrt();
            let b = mid / (2.0 * LN_2);
            if zero_delay_density(&law, tau_f, b, b) > target {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        (lo * hi).sqrt()
    }
}

/// Where the pair rate comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairRateSource {
    /// `R = k P`, `k` in s^-1 W^-1.
    FromK(f64),
    /// Fixed pair rate, s^-1.
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub cavity: CavityParams,
    /// W.
    pub pump_power: f64,
    pub pair_rate_source: PairRateSource,
    /// s.
    pub duration: f64,
    /// Probability that a photon goes to arm A.
    #[serde(default = "default_splitter")]
    pub splitter_ratio: f64,
    pub detector_a: DetectorModel,
    pub detector_b: DetectorModel,
    /// Constant electronic delay added to channel B, s.
    #[serde(default = "default_delay")]
    pub channel_b_delay: f64,
    pub seed: u64,
}

fn default_splitter() -> f64 {
    0.5
}

fn default_delay() -> f64 {
    -0.98e-9
}

impl SimConfig {
    /// Cavity fitted from a 14.16 MHz linewidth comb with 1.34 ns spacing and
    /// 11% coupler, `k = 104.5 MHz/mW`, 50/50 splitter, detectors of
    /// efficiency `0.85 * 0.95 * 0.5`, 500 s^-1 dark counts, no dead time and
    /// jitter from [`DetectorModel::pump_relation_jitter`].
    pub fn reference_setup(pump_power: f64, duration: f64, seed: u64) -> Self {
        let cavity = derive_cavity_rates(units::linewidth_mhz_to_angular(14.16), 1.34e-9, 0.11, 0.02)
            .expect("reference cavity is valid");
        let detector = DetectorModel {
            efficiency: 0.85 * 0.95 * 0.5,
            dark_rate: 500.0,
            dead_time: 0.0,
            jitter_fwhm: DetectorModel::pump_relation_jitter(&cavity),
        };
        Self {
            cavity,
            pump_power,
            pair_rate_source: PairRateSource::FromK(units::mhz_per_mw_to_si(104.5)),
            duration,
            splitter_ratio: 0.5,
            detector_a: detector,
            detector_b: detector,
            channel_b_delay: default_delay(),
            seed,
        }
    }

    pub fn pair_rate(&self) -> f64 {
        match self.pair_rate_source {
            PairRateSource::FromK(k) => k * self.pump_power,
            PairRateSource::Explicit(r) => r,
        }
    }

    /// Checks hard invariants; soft problems come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::ConfigInvalid(format!("duration {} must be positive", self.duration)));
        }
        if self.duration * PS_PER_S > u64::MAX as f64 / 2.0 {
            return Err(Error::ConfigInvalid("duration overflows the picosecond time base".into()));
        }
        if !(self.splitter_ratio > 0.0 && self.splitter_ratio < 1.0) {
            return Err(Error::ConfigInvalid(format!("splitter ratio {} not in (0, 1)", self.splitter_ratio)));
        }
        if !(self.pump_power >= 0.0) {
            return Err(Error::ConfigInvalid(format!("pump power {} must be non-negative", self.pump_power)));
        }
        match self.pair_rate_source {
            PairRateSource::FromK(k) if !(k > 0.0) => {
                return Err(Error::ConfigInvalid(format!("k = {k} must be positive")))
            }
            PairRateSource::Explicit(r) if !(r >= 0.0 && r.is_finite()) => {
                return Err(Error::ConfigInvalid(format!("pair rate {r} must be non-negative")))
            }
            _ => {}
        }
        if !self.channel_b_delay.is_finite() {
            return Err(Error::ConfigInvalid("channel B delay must be finite".into()));
        }
        self.detector_a.validate()?;
        self.detector_b.validate()?;

        let mut warnings = Vec::new();
        let r = self.pair_rate();
        for (arm, det, share) in [
            ("A", &self.detector_a, self.splitter_ratio),
            ("B", &self.detector_b, 1.0 - self.splitter_ratio),
        ] {
            if det.dead_time > 0.0 && 2.0 * r * share >= 1.0 / det.dead_time {
                warnings.push(format!(
                    "arm {arm}: photon rate {:.3e} s^-1 exceeds the dead-time limit {:.3e} s^-1",
                    2.0 * r * share,
                    1.0 / det.dead_time
                ));
            }
        }
        Ok(warnings)
    }
}

/// Two-sided geometric law of the round-trip offset between the photons of
/// a pair: `Pr(n) = (1-q)/(1+q) q^|n|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOffsetLaw {
    q: f64,
    ln_q: f64,
}

impl ModeOffsetLaw {
    pub fn new(q: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&q) {
            return Err(Error::ConfigInvalid(format!("mode offset ratio {q} not in [0, 1)")));
        }
        Ok(Self { q, ln_q: q.ln() })
    }

    pub fn for_cavity(cavity: &CavityParams) -> Self {
        Self::new((-cavity.omega_c() * cavity.tau_f()).exp()).expect("q is in (0, 1) for a valid cavity")
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn p_zero(&self) -> f64 {
        (1.0 - self.q) / (1.0 + self.q)
    }

    pub fn probability(&self, n: i64) -> f64 {
        self.p_zero() * self.q.powi(n.unsigned_abs().min(i32::MAX as u64) as i32)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> i64 {
        if self.q == 0.0 || rng.random::<f64>() < self.p_zero() {
            return 0;
        }
        // |n| - 1 is geometric on {0, 1, ...} with success 1 - q, by inversion
        let u = 1.0 - rng.random::<f64>();
        let m = 1 + (u.ln() / self.ln_q).floor() as i64;
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    }
}

/// Ground truth of a simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    /// Pair emission rate, s^-1.
    pub pair_rate: f64,
    pub pump_power: f64,
    /// `k` when the rate came from the pump calibration.
    pub k: Option<f64>,
    pub q: f64,
    pub omega_c: f64,
    pub tau_f: f64,
    pub tau0: f64,
    pub gamma1: f64,
    /// Peak `g2` the generative model produces at `tau0`, given the
    /// detectors' jitter and dark counts.
    pub expected_g2zero: f64,
    /// `2 + gamma1 / (2R)`, the closed-form pump relation.
    pub pump_relation_g2zero: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub a: TimeTagStream,
    pub b: TimeTagStream,
    pub truth: TruthRecord,
    pub warnings: Vec<String>,
}

/// SplitMix64 step, used to derive independent seeds from one user seed.
fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed.wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Density at `t` of the difference of two independent Laplace variables
/// with scales `b1`, `b2`.
fn laplace_difference_density(t: f64, b1: f64, b2: f64) -> f64 {
    let t = t.abs();
    if b1 == 0.0 && b2 == 0.0 {
        return if t == 0.0 { f64::INFINITY } else { 0.0 };
    }
    if b1 == 0.0 || b2 == 0.0 {
        let b = b1.max(b2);
        return (-t / b).exp() / (2.0 * b);
    }
    if (b1 - b2).abs() <= 1e-12 * b1.max(b2) {
        let b = 0.5 * (b1 + b2);
        return (1.0 + t / b) * (-t / b).exp() / (4.0 * b);
    }
    (b1 * (-t / b1).exp() - b2 * (-t / b2).exp()) / (2.0 * (b1 * b1 - b2 * b2))
}

/// Density of the detected pair delay at the zero-delay peak centre.
fn zero_delay_density(law: &ModeOffsetLaw, tau_f: f64, b1: f64, b2: f64) -> f64 {
    let mut density = laplace_difference_density(0.0, b1, b2) * law.p_zero();
    let mut n = 1i64;
    loop {
        let term = 2.0 * law.probability(n) * laplace_difference_density(n as f64 * tau_f, b1, b2);
        density += term;
        if term < 1e-16 * density || n > 100_000 {
            break;
        }
        n += 1;
    }
    density
}

fn expected_peak(config: &SimConfig, law: &ModeOffsetLaw, rate: f64) -> f64 {
    if rate == 0.0 {
        return 1.0;
    }
    let (b1, b2) = (config.detector_a.jitter_scale(), config.detector_b.jitter_scale());
    let density = zero_delay_density(law, config.cavity.tau_f(), b1, b2);
    // dark counts add to the singles but not to the coincidences
    let s = config.splitter_ratio;
    let signal_a = 2.0 * s * rate * config.detector_a.efficiency;
    let signal_b = 2.0 * (1.0 - s) * rate * config.detector_b.efficiency;
    let dilution = if signal_a > 0.0 && signal_b > 0.0 {
        signal_a / (signal_a + config.detector_a.dark_rate) * signal_b / (signal_b + config.detector_b.dark_rate)
    } else {
        0.0
    };
    1.0 + dilution * density / (2.0 * rate)
}

fn clamp(t: i64, duration_ps: u64) -> u64 {
    t.clamp(0, duration_ps as i64) as u64
}

fn to_ps(t: f64) -> i64 {
    (t * PS_PER_S).round() as i64
}

/// Generate the two detected streams for `config`. Fully determined by the
/// seed.
pub fn simulate(config: &SimConfig) -> Result<SimOutput> {
    let warnings = config.validate()?;
    let rate = config.pair_rate();
    let law = ModeOffsetLaw::for_cavity(&config.cavity);
    let duration_ps = to_ps(config.duration) as u64;
    let tau_f = config.cavity.tau_f();
    let delay_ps = to_ps(config.channel_b_delay);

    // emission and detection run in fixed slices of acquisition time, each
    // on its own streams, so the result does not depend on the thread count
    let slices = (config.duration / EMISSION_SLICE).ceil().max(1.0) as u64;
    let (seed_a, seed_b) = (derive_seed(config.seed, 1), derive_seed(config.seed, 2));
    let parts: Vec<(Vec<u64>, Vec<u64>)> = (0..slices)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0));
            rng.set_stream(i);
            let start = i as f64 * EMISSION_SLICE;
            let end = (start + EMISSION_SLICE).min(config.duration);
            let expected = (rate * (end - start)) as usize + 16;
            let mut a = Vec::with_capacity(expected);
            let mut b = Vec::with_capacity(expected);
            if rate > 0.0 {
                let mean_gap = 1.0 / rate;
                let mut t = start;
                loop {
                    let gap: f64 = Exp1.sample(&mut rng);
                    t += gap * mean_gap;
                    if t > end {
                        break;
                    }
                    let first = to_ps(t);
                    let second = to_ps(t + law.sample(&mut rng) as f64 * tau_f);
                    for photon in [first, second] {
                        if rng.random::<f64>() < config.splitter_ratio {
                            a.push(clamp(photon, duration_ps));
                        } else {
                            b.push(clamp(photon + delay_ps, duration_ps));
                        }
                    }
                }
            }
            (
                thin_and_jitter(&a, duration_ps, &config.detector_a, seed_a, i + 1),
                thin_and_jitter(&b, duration_ps, &config.detector_b, seed_b, i + 1),
            )
        })
        .collect();
    let mut detected_a = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    let mut detected_b = Vec::with_capacity(parts.iter().map(|p| p.1.len()).sum());
    for (a, b) in parts {
        detected_a.extend(a);
        detected_b.extend(b);
    }
    let a = finish_detection(0, detected_a, duration_ps, &config.detector_a, seed_a);
    let b = finish_detection(1, detected_b, duration_ps, &config.detector_b, seed_b);

    let truth = TruthRecord {
        pair_rate: rate,
        pump_power: config.pump_power,
        k: match config.pair_rate_source {
            PairRateSource::FromK(k) => Some(k),
            PairRateSource::Explicit(_) => None,
        },
        q: law.q(),
        omega_c: config.cavity.omega_c(),
        tau_f,
        tau0: config.channel_b_delay,
        gamma1: config.cavity.gamma1(),
        expected_g2zero: expected_peak(config, &law, rate),
        pump_relation_g2zero: if rate > 0.0 {
            2.0 + config.cavity.gamma1() / (2.0 * rate)
        } else {
            f64::INFINITY
        },
        seed: config.seed,
    };
    Ok(SimOutput {
        a: a.with_truth(truth),
        b: b.with_truth(truth),
        truth,
        warnings,
    })
}

/// Pass an ideal (sorted) arrival stream through a detector: thinning,
/// jitter, dark counts, re-sort, dead time. The output is strictly
/// increasing and clamped to the acquisition window.
pub fn apply_detector(ideal: &TimeTagStream, det: &DetectorModel, seed: u64) -> TimeTagStream {
    let duration_ps = ideal.duration_ps();
    let detected: Vec<u64> = ideal
        .timestamps()
        .par_chunks(DETECTOR_CHUNK)
        .enumerate()
        .flat_map_iter(|(i, chunk)| thin_and_jitter(chunk, duration_ps, det, seed, i as u64 + 1))
        .collect();
    finish_detection(ideal.channel(), detected, duration_ps, det, seed)
}

/// Efficiency and jitter, on random stream `stream` of `seed`.
fn thin_and_jitter(arrivals: &[u64], duration_ps: u64, det: &DetectorModel, seed: u64, stream: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let scale_ps = det.jitter_scale() * PS_PER_S;
    let keep_all = det.efficiency >= 1.0;
    let mut kept = Vec::with_capacity((arrivals.len() as f64 * det.efficiency) as usize + 16);
    for &t in arrivals {
        if !keep_all && rng.random::<f64>() >= det.efficiency {
            continue;
        }
        let t = if scale_ps > 0.0 {
            let e: f64 = Exp1.sample(&mut rng);
            let j = if rng.random::<bool>() { e } else { -e };
            clamp(t as i64 + (j * scale_ps).round() as i64, duration_ps)
        } else {
            t
        };
        kept.push(t);
    }
    kept
}

/// Dark counts, sort and dead time.
fn finish_detection(channel: u8, mut out: Vec<u64>, duration_ps: u64, det: &DetectorModel, seed: u64) -> TimeTagStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if det.dark_rate > 0.0 {
        let mean = det.dark_rate * duration_ps as f64 / PS_PER_S;
        let count = if mean > 0.0 {
            Poisson::new(mean).map(|p| p.sample(&mut rng) as u64).unwrap_or(0)
        } else {
            0
        };
        out.extend((0..count).map(|_| rng.random_range(0..=duration_ps)));
    }

    out.par_sort_unstable();

    let dead_ps = (det.dead_time * PS_PER_S).round() as u64;
    let mut last: Option<u64> = None;
    out.retain(|&t| match last {
        Some(prev) if t <= prev || t - prev < dead_ps => false,
        _ => {
            last = Some(t);
            true
        }
    });

    TimeTagStream::from_sorted_unchecked(channel, out, duration_ps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ts: Vec<u64>, dur: u64) -> TimeTagStream {
        TimeTagStream::new(0, ts, dur).unwrap()
    }

    #[test]
    fn ideal_detector_is_identity() {
        let s = stream(vec![1, 5, 9, 1000], 2000);
        assert_eq!(apply_detector(&s, &DetectorModel::ideal(), 3), s);
    }

    #[test]
    fn thinning_is_binomial() {
        let n = 1_000_000u64;
        let s = stream((0..n).map(|i| i * 10).collect(), n * 10);
        let det = DetectorModel {
            efficiency: 0.5,
            ..DetectorModel::ideal()
        };
        let kept = apply_detector(&s, &det, 11).len() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((kept - 5e5).abs() < 5.0 * sigma, "{kept}");
    }

    #[test]
    fn dead_time_enforced() {
        // 10 kHz Poisson-ish stream over 10 s
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut t = 0.0;
        let mut ts = Vec::new();
        loop {
            let g: f64 = Exp1.sample(&mut rng);
            t += g * 1e-4;
            if t > 10.0 {
                break;
            }
            ts.push(to_ps(t) as u64);
        }
        let s = stream(ts, 10 * 1_000_000_000_000);
        let det = DetectorModel {
            dead_time: 1e-3,
            ..DetectorModel::ideal()
        };
        let out = apply_detector(&s, &det, 1);
        assert!(out.len() < s.len());
        assert!(out.timestamps().windows(2).all(|w| w[1] - w[0] >= 1_000_000_000));
    }

    #[test]
    fn zero_efficiency_gives_empty_streams() {
        let mut cfg = SimConfig::reference_setup(30e-6, 0.01, 1);
        for d in [&mut cfg.detector_a, &mut cfg.detector_b] {
            d.efficiency = 0.0;
            d.dark_rate = 0.0;
        }
        let out = simulate(&cfg).unwrap();
        assert!(out.a.is_empty() && out.b.is_empty());
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = SimConfig::reference_setup(30e-6, 0.01, 1);
        cfg.duration = 0.0;
        assert!(matches!(simulate(&cfg), Err(Error::ConfigInvalid(_))));
        let mut cfg = SimConfig::reference_setup(30e-6, 0.01, 1);
        cfg.splitter_ratio = 1.0;
        assert!(matches!(simulate(&cfg), Err(Error::ConfigInvalid(_))));
        let mut cfg = SimConfig::reference_setup(30e-6, 0.01, 1);
        cfg.detector_a.efficiency = 1.5;
        assert!(matches!(simulate(&cfg), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn dead_time_warning() {
        let mut cfg = SimConfig::reference_setup(30e-6, 0.001, 1);
        cfg.detector_a.dead_time = 1e-6;
        let w = cfg.validate().unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn laplace_difference_is_a_density() {
        for (b1, b2) in [(1.0, 1.0), (1.0, 2.0), (0.0, 1.5), (0.7, 0.7000000000001)] {
            let h = 1e-3;
            let total: f64 = (-60_000..=60_000).map(|i| laplace_difference_density(i as f64 * h, b1, b2) * h).sum();
            assert!((total - 1.0).abs() < 1e-5, "{b1} {b2} {total}");
        }
    }

    #[test]
    fn pump_relation_jitter_reproduces_peak() {
        let mut cfg = SimConfig::reference_setup(30e-6, 1.0, 0);
        cfg.detector_a.dark_rate = 0.0;
        cfg.detector_b.dark_rate = 0.0;
        let law = ModeOffsetLaw::for_cavity(&cfg.cavity);
        let r = cfg.pair_rate();
        let peak = expected_peak(&cfg, &law, r);
        let target = 1.0 + cfg.cavity.gamma1() / (2.0 * r);
        assert!((peak - target).abs() / target < 1e-12, "{peak} {target}");
    }
}
