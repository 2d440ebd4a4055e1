use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{invalid, Error, Result};

/// Largest wrapped step accepted by the unwrapper. Anything larger cannot be
/// told apart from a jump of the opposite sign.
pub const MAX_UNWRAP_STEP: f64 = FRAC_PI_2;

/// Rotating-frame phase `arg c0 − arg c1 − ω₀t` sampled on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeries {
    pub times: Vec<f64>,
    pub phase: Vec<f64>,
    /// Widths of the centered boxcar averages already applied, in seconds.
    /// A sinusoid at ω passes through them with gain Π sinc(ω w / 2).
    pub boxcars: Vec<f64>,
}

impl PhaseSeries {
    pub fn new(times: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        if times.len() != phase.len() {
            return Err(invalid("phase", "times and phase lengths differ"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("times", "must be strictly increasing"));
        }
        Ok(Self {
            times,
            phase,
            boxcars: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn span(&self) -> f64 {
        match (self.times.first(), self.times.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Amplitude gain of the applied boxcars for a sinusoid at `omega`.
    pub fn boxcar_gain(&self, omega: f64) -> f64 {
        self.boxcars
            .iter()
            .map(|w| {
                let x = 0.5 * omega * w;
                if x.abs() < 1e-8 {
                    1.0
                } else {
                    x.sin() / x
                }
            })
            .product()
    }

    /// Centered moving average of width `width`, exact for the piecewise-linear
    /// interpolant of the samples. Points whose window leaves the series are
    /// dropped. A window of exactly 1/f removes f and all its harmonics.
    pub fn boxcar(&self, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(invalid("width", "must be > 0"));
        }
        let n = self.len();
        if n < 2 || self.span() <= width {
            return Err(invalid("width", "boxcar wider than the series"));
        }
        let t = &self.times;
        let y = &self.phase;
        let mut cumulative = Vec::with_capacity(n);
        cumulative.push(0.0);
        for k in 1..n {
            let prev: f64 = cumulative[k - 1];
            cumulative.push(prev + 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]));
        }
        // ∫_{t0}^{x} of the linear interpolant
        let integral = |x: f64, hint: &mut usize| -> f64 {
            while *hint + 2 < n && t[*hint + 1] <= x {
                *hint += 1;
            }
            let k = *hint;
            let dt = t[k + 1] - t[k];
            let u = x - t[k];
            let yx = y[k] + (y[k + 1] - y[k]) * u / dt;
            cumulative[k] + 0.5 * (y[k] + yx) * u
        };
        let half = 0.5 * width;
        let (t0, t1) = (t[0], t[n - 1]);
        let mut lo_hint = 0;
        let mut hi_hint = 0;
        let mut times = Vec::new();
        let mut phase = Vec::new();
        for &tc in t {
            if tc - half < t0 || tc + half > t1 {
                continue;
            }
            let hi = integral(tc + half, &mut hi_hint);
            let lo = integral(tc - half, &mut lo_hint);
            times.push(tc);
            phase.push((hi - lo) / width);
        }
        let mut boxcars = self.boxcars.clone();
        boxcars.push(width);
        Ok(Self {
            times,
            phase,
            boxcars,
        })
    }

    /// Keep every `stride`-th sample.
    pub fn decimate(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        Self {
            times: self.times.iter().step_by(stride).copied().collect(),
            phase: self.phase.iter().step_by(stride).copied().collect(),
            boxcars: self.boxcars.clone(),
        }
    }
}

/// Unwrapped relative phase with the ω₀ carrier removed.
pub fn accumulated_phase(trajectory: &Trajectory) -> Result<PhaseSeries> {
    let w0 = trajectory.resonance;
    let mut out: Vec<f64> = Vec::with_capacity(trajectory.len());
    let mut prev_wrapped = 0.0;
    for (k, (t, s)) in trajectory.times.iter().zip(&trajectory.states).enumerate() {
        let wrapped = wrap(s.relative_phase() - (w0 * t).rem_euclid(TAU));
        match out.last().copied() {
            None => out.push(wrapped),
            Some(last) => {
                let step = wrap(wrapped - prev_wrapped);
                if step.abs() > MAX_UNWRAP_STEP {
                    return Err(Error::UnwrapAmbiguity {
                        index: k - 1,
                        jump: step,
                    });
                }
                out.push(last + step);
            }
        }
        prev_wrapped = wrapped;
    }
    PhaseSeries::new(trajectory.times.clone(), out)
}

fn wrap(x: f64) -> f64 {
    let r = (x + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}
