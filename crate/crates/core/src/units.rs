//! Physical constants and unit adapters. Everything inside the crate is SI:
//! seconds, watts, angular rates in s^-1. Conversions happen at the edges.

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub const PS_PER_S: f64 = 1e12;

pub fn seconds_to_ps(t: f64) -> f64 {
    t * PS_PER_S
}

pub fn ps_to_seconds(t: f64) -> f64 {
    t / PS_PER_S
}

/// Linewidth quoted as `Ω/2π` in MHz to an angular rate.
pub fn linewidth_mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz * 1e6
}

pub fn angular_to_linewidth_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI * 1e6)
}

/// Rate slope quoted in MHz/mW (as on a rate-vs-pump plot) to s^-1 W^-1.
pub fn mhz_per_mw_to_si(k: f64) -> f64 {
    k * 1e6 / 1e-3
}

pub fn si_to_mhz_per_mw(k: f64) -> f64 {
    k * 1e-3 / 1e6
}

pub fn mw_to_w(p: f64) -> f64 {
    p * 1e-3
}

pub fn uw_to_w(p: f64) -> f64 {
    p * 1e-6
}

/// `10 log10(v)` without validation; see [`crate::opo::to_decibel`].
pub(crate) fn db(v: f64) -> f64 {
    10.0 * v.log10()
}
