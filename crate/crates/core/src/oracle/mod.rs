//! Brute-force two-level dynamics under the full transverse drive
//!
//! ```text
//! H(t) = (ω₀/2) σz + Σᵢ Ωᵢ cos(ωᵢ t + φᵢ) σx
//! ```
//!
//! with no rotating-wave or far-detuning approximation. Used to check the
//! closed forms in [`crate::qfm`] independently of how they were derived.
//!
//! Basis convention: `c1` is the upper level (σz = +1, the selected |±1⟩),
//! `c0` the lower level |0⟩. The relative phase `arg c0 − arg c1` advances by
//! ω₀t under free precession.

mod fit;
mod phase;
mod validate;

pub use fit::{fit_at_frequency, fit_effective, OracleFit, RESIDUAL_FLAG_FRACTION};
pub use phase::{accumulated_phase, PhaseSeries};
pub use validate::{
    validate_effective, AgreementBounds, OracleComparison, OracleRun, DEFAULT_BOUNDS,
    SCALE_SEPARATION,
};

use std::f64::consts::{FRAC_1_SQRT_2, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::qfm::{FieldTone, NvTwoLevel};

/// Hard cap on simulated time per oracle run, in seconds.
pub const MAX_DURATION: f64 = 50e-6;

/// Renormalize once |‖ψ‖² − 1| drifts past this.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Default number of steps per fastest period (step = 1/(100·f_max)).
pub const DEFAULT_STEPS_PER_PERIOD: f64 = 100.0;

/// Largest allowed step is 1/(50·f_max).
pub const MIN_STEPS_PER_PERIOD: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpinState {
    pub c0: Complex64,
    pub c1: Complex64,
}

impl SpinState {
    pub fn ground() -> Self {
        Self {
            c0: Complex64::new(1.0, 0.0),
            c1: Complex64::new(0.0, 0.0),
        }
    }

    pub fn excited() -> Self {
        Self {
            c0: Complex64::new(0.0, 0.0),
            c1: Complex64::new(1.0, 0.0),
        }
    }

    /// Equal superposition reached from |0⟩ by an ideal π/2 pulse about y.
    pub fn superposition() -> Self {
        Self::ground().ideal_half_pi_y()
    }

    /// Instantaneous ideal rotation by π/2 about y.
    pub fn ideal_half_pi_y(self) -> Self {
        // R_y(π/2) = [[c, -s], [s, c]] acting on (c0, c1)
        let s = FRAC_1_SQRT_2;
        Self {
            c0: (self.c0 - self.c1) * s,
            c1: (self.c0 + self.c1) * s,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c0.norm_sqr() + self.c1.norm_sqr()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm_sqr().sqrt();
        Self {
            c0: self.c0 / n,
            c1: self.c1 / n,
        }
    }

    pub fn upper_population(&self) -> f64 {
        self.c1.norm_sqr()
    }

    /// arg c0 − arg c1, wrapped.
    pub fn relative_phase(&self) -> f64 {
        (self.c0 * self.c1.conj()).arg()
    }
}

/// Frame used for the numerics. The returned states are lab-frame in both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Integrate the lab-frame equations directly.
    Lab,
    /// Integrate in the interaction picture of (ω₀/2)σz, where the free
    /// precession is exact and only the drive is stepped.
    #[default]
    Rotating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Fixed RK4 step in seconds.
    pub step: f64,
    pub duration: f64,
    pub frame: Frame,
    /// Keep every n-th step in the trajectory.
    pub record_every: usize,
}

impl IntegrationConfig {
    /// Step of 1/(100·f_max) for the given drive set.
    pub fn for_tones(tones: &[FieldTone], nv: &NvTwoLevel, duration: f64) -> Self {
        Self {
            step: 1.0 / (DEFAULT_STEPS_PER_PERIOD * max_frequency_hz(tones, nv)),
            duration,
            frame: Frame::Rotating,
            record_every: 25,
        }
    }

    pub fn with_step(self, step: f64) -> Self {
        Self { step, ..self }
    }

    pub fn with_frame(self, frame: Frame) -> Self {
        Self { frame, ..self }
    }

    pub fn with_record_every(self, record_every: usize) -> Self {
        Self { record_every, ..self }
    }

    pub fn n_steps(&self) -> usize {
        (self.duration / self.step).round() as usize
    }

    fn check(&self, tones: &[FieldTone], nv: &NvTwoLevel) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(invalid("duration", "must be > 0"));
        }
        if self.duration > MAX_DURATION * (1.0 + 1e-12) {
            return Err(Error::DurationTooLong {
                duration: self.duration,
                cap: MAX_DURATION,
            });
        }
        if self.record_every == 0 {
            return Err(invalid("record_every", "must be >= 1"));
        }
        let limit = 1.0 / (MIN_STEPS_PER_PERIOD * max_frequency_hz(tones, nv));
        if !(self.step > 0.0) || self.step > limit {
            return Err(Error::StepTooLarge {
                step: self.step,
                limit,
            });
        }
        Ok(())
    }
}

/// Largest frequency present, in Hz: ω₀ plus the fastest drive.
pub fn max_frequency_hz(tones: &[FieldTone], nv: &NvTwoLevel) -> f64 {
    let fastest = tones.iter().map(|t| t.frequency).fold(0.0, f64::max);
    (nv.resonance + fastest) / TAU
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SpinState>,
    pub resonance: f64,
    /// Largest |‖ψ‖² − 1| seen at any step, before renormalization.
    pub max_norm_drift: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> Option<(f64, SpinState)> {
        Some((*self.times.last()?, *self.states.last()?))
    }
}

#[inline]
fn drive(tones: &[FieldTone], t: f64) -> f64 {
    tones.iter().map(|tone| tone.value(t)).sum()
}

type Rhs = fn(&[FieldTone], f64, f64, SpinState) -> SpinState;

/// dψ/dt in the lab frame.
fn lab_rhs(tones: &[FieldTone], w0: f64, t: f64, s: SpinState) -> SpinState {
    let g = drive(tones, t);
    let mi = Complex64::new(0.0, -1.0);
    SpinState {
        c1: mi * (s.c1 * (0.5 * w0) + s.c0 * g),
        c0: mi * (s.c0 * (-0.5 * w0) + s.c1 * g),
    }
}

/// dψ/dt in the interaction picture of (ω₀/2)σz.
fn rotating_rhs(tones: &[FieldTone], w0: f64, t: f64, s: SpinState) -> SpinState {
    let g = drive(tones, t);
    let carrier = Complex64::from_polar(1.0, w0 * t);
    let mi = Complex64::new(0.0, -1.0);
    SpinState {
        c1: mi * g * carrier * s.c0,
        c0: mi * g * carrier.conj() * s.c1,
    }
}

fn axpy(s: SpinState, h: f64, k: SpinState) -> SpinState {
    SpinState {
        c0: s.c0 + k.c0 * h,
        c1: s.c1 + k.c1 * h,
    }
}

fn rk4_step(rhs: Rhs, tones: &[FieldTone], w0: f64, t: f64, h: f64, s: SpinState) -> SpinState {
    let k1 = rhs(tones, w0, t, s);
    let k2 = rhs(tones, w0, t + 0.5 * h, axpy(s, 0.5 * h, k1));
    let k3 = rhs(tones, w0, t + 0.5 * h, axpy(s, 0.5 * h, k2));
    let k4 = rhs(tones, w0, t + h, axpy(s, h, k3));
    SpinState {
        c0: s.c0 + (k1.c0 + (k2.c0 + k3.c0) * 2.0 + k4.c0) * (h / 6.0),
        c1: s.c1 + (k1.c1 + (k2.c1 + k3.c1) * 2.0 + k4.c1) * (h / 6.0),
    }
}

/// Free-precession map between the lab frame and the interaction picture.
fn to_lab(s: SpinState, w0: f64, t: f64) -> SpinState {
    let half = Complex64::from_polar(1.0, 0.5 * w0 * t);
    SpinState {
        c1: s.c1 * half.conj(),
        c0: s.c0 * half,
    }
}

fn from_lab(s: SpinState, w0: f64, t: f64) -> SpinState {
    let half = Complex64::from_polar(1.0, 0.5 * w0 * t);
    SpinState {
        c1: s.c1 * half,
        c0: s.c0 * half.conj(),
    }
}

/// Integrate from `t = 0` with the given lab-frame initial state.
pub fn evolve_lab(
    initial: SpinState,
    tones: &[FieldTone],
    nv: &NvTwoLevel,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    if tones.is_empty() {
        return Err(invalid("tones", "at least one tone is required"));
    }
    evolve(initial, tones, nv, cfg)
}

/// Like [`evolve_lab`] but allows an empty drive set (free precession).
pub fn evolve(
    initial: SpinState,
    tones: &[FieldTone],
    nv: &NvTwoLevel,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    cfg.check(tones, nv)?;
    let w0 = nv.resonance;
    let n = cfg.n_steps();
    let h = cfg.duration / n as f64;
    let (rhs, mut state): (Rhs, SpinState) = match cfg.frame {
        Frame::Lab => (lab_rhs, initial.normalized()),
        Frame::Rotating => (rotating_rhs, from_lab(initial.normalized(), w0, 0.0)),
    };
    let lab = |s: SpinState, t: f64| match cfg.frame {
        Frame::Lab => s,
        Frame::Rotating => to_lab(s, w0, t),
    };

    let cap = n / cfg.record_every + 2;
    let mut times = Vec::with_capacity(cap);
    let mut states = Vec::with_capacity(cap);
    times.push(0.0);
    states.push(lab(state, 0.0));
    let mut max_drift: f64 = 0.0;

    for k in 0..n {
        let t = k as f64 * h;
        state = rk4_step(rhs, tones, w0, t, h, state);
        let drift = (state.norm_sqr() - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > NORM_TOLERANCE {
            state = state.normalized();
        }
        let step = k + 1;
        if step % cfg.record_every == 0 || step == n {
            let t_next = step as f64 * h;
            times.push(t_next);
            states.push(lab(state, t_next));
        }
    }
    Ok(Trajectory {
        times,
        states,
        resonance: w0,
        max_norm_drift: max_drift,
    })
}
