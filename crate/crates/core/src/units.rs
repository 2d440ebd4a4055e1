//! Physical constants and unit conversions.
//!
//! Everything inside the crate is carried in angular units (rad/s). Hertz and
//! tesla only appear at the edges.

use std::f64::consts::TAU;

/// Electron gyromagnetic ratio for g ≈ 2, in Hz/T.
pub const GYROMAGNETIC_HZ_PER_T: f64 = 28.024e9;

/// Electron gyromagnetic ratio in rad/(s·T).
pub const GAMMA: f64 = TAU * GYROMAGNETIC_HZ_PER_T;

/// NV |0⟩ ↔ |−1⟩ transition at the 20.7 mT working point, in Hz.
pub const NV_MINUS_ONE_HZ: f64 = 2.29e9;

/// NV |0⟩ ↔ |+1⟩ transition at the 20.7 mT working point, in Hz.
pub const NV_PLUS_ONE_HZ: f64 = 3.45e9;

#[inline]
pub fn hz_to_angular(f: f64) -> f64 {
    TAU * f
}

#[inline]
pub fn angular_to_hz(w: f64) -> f64 {
    w / TAU
}

/// Field amplitude in tesla to Rabi-style angular amplitude Ω = γB.
#[inline]
pub fn tesla_to_angular(b: f64) -> f64 {
    GAMMA * b
}

#[inline]
pub fn angular_to_tesla(omega: f64) -> f64 {
    omega / GAMMA
}

/// Wrap an angle into `[0, 2π)`.
pub fn normalize_phase(phi: f64) -> f64 {
    let r = phi.rem_euclid(TAU);
    // rem_euclid can return exactly TAU for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Wrap an angle into `(-π, π]`.
pub fn wrap_to_pi(phi: f64) -> f64 {
    let r = normalize_phase(phi);
    if r > std::f64::consts::PI {
        r - TAU
    } else {
        r
    }
}
