use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex64, FftPlanner};
use serde::{Deserialize, Serialize};

use super::PhaseSeries;
use crate::error::{invalid, Error, Result};
use crate::units::normalize_phase;

/// A fit is flagged when its residual RMS exceeds this fraction of the fitted
/// modulation amplitude.
pub const RESIDUAL_FLAG_FRACTION: f64 = 0.1;

const MIN_PERIODS: f64 = 3.0;
const MAX_ITERATIONS: usize = 200;
const ZERO_PAD: usize = 4;

/// Parameters of `a·sin(ωt + φ) + b·t + c` mapped onto the effective
/// Hamiltonian: Ω_e = aω/2, ω_e = ω, φ_e = φ, δ = b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    /// ω_e in rad/s.
    pub frequency: f64,
    /// Ω_e ≥ 0 in rad/s, corrected for any smoothing of the series.
    pub amplitude: f64,
    /// φ_e in [0, 2π).
    pub phase: f64,
    /// δ in rad/s.
    pub stark_shift: f64,
    /// Phase-modulation amplitude a in radians (after smoothing correction).
    pub modulation: f64,
    /// RMS of the fit residual, in radians.
    pub residual_rms: f64,
    /// Residual exceeds [`RESIDUAL_FLAG_FRACTION`] of the modulation seen in
    /// the (smoothed) series.
    pub flagged: bool,
    pub iterations: usize,
}

struct Linear {
    coeffs: DVector<f64>,
    rss: f64,
}

struct Problem<'a> {
    times: &'a [f64],
    values: DVector<f64>,
    t_mid: f64,
    t_half: f64,
}

impl Problem<'_> {
    fn design(&self, omega: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.times.len(), 4, |i, j| {
            let t = self.times[i];
            match j {
                0 => (omega * t).sin(),
                1 => (omega * t).cos(),
                2 => (t - self.t_mid) / self.t_half,
                _ => 1.0,
            }
        })
    }

    fn solve(&self, omega: f64) -> Result<Linear> {
        let a = self.design(omega);
        let coeffs = a
            .clone()
            .svd(true, true)
            .solve(&self.values, 1e-14)
            .map_err(|e| invalid("phase", e.to_string()))?;
        let resid = &self.values - &a * &coeffs;
        Ok(Linear {
            coeffs,
            rss: resid.norm_squared(),
        })
    }
}

/// Residual after removing a least-squares straight line.
fn detrend(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len() as f64;
    let mt = times.iter().sum::<f64>() / n;
    let my = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in times.iter().zip(values) {
        sxy += (t - mt) * (y - my);
        sxx += (t - mt) * (t - mt);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    times
        .iter()
        .zip(values)
        .map(|(t, y)| y - my - slope * (t - mt))
        .collect()
}

fn fft_guess(times: &[f64], values: &[f64]) -> Result<f64> {
    let n = times.len();
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    let uniform = times
        .windows(2)
        .all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt);
    if !uniform {
        return Err(invalid("times", "fit needs a uniformly sampled series"));
    }
    let resid = detrend(times, values);
    let len = n * ZERO_PAD;
    let mut buf: Vec<Complex64> = resid
        .iter()
        .map(|&y| Complex64::new(y, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(len)
        .collect();
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    // skip the lowest natural bin: what is left of the ramp lives there
    let first = ZERO_PAD + 1;
    let (k, _) = buf[first..len / 2]
        .iter()
        .enumerate()
        .map(|(i, c)| (i + first, c.norm_sqr()))
        .fold((first, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    Ok(TAU * k as f64 / (len as f64 * dt))
}

/// Fit `a·sin(ωt + φ) + b·t + c` to an accumulated-phase series.
pub fn fit_effective(series: &PhaseSeries) -> Result<OracleFit> {
    let n = series.len();
    if n < 16 {
        return Err(invalid("phase", format!("need at least 16 samples, got {n}")));
    }
    let times = &series.times;
    let span = series.span();
    let guess = fft_guess(times, &series.phase)?;
    let periods = span * guess / TAU;
    if periods < MIN_PERIODS {
        return Err(Error::InsufficientSpan {
            periods,
            required: MIN_PERIODS,
        });
    }

    let problem = Problem {
        times,
        values: DVector::from_column_slice(&series.phase),
        t_mid: 0.5 * (times[0] + times[n - 1]),
        t_half: 0.5 * span,
    };

    // golden-section search on the projected residual over ±1.5 natural bins
    let bin = TAU / span;
    let (mut lo, mut hi) = ((guess - 1.5 * bin).max(0.5 * bin), guess + 1.5 * bin);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = problem.solve(x1)?.rss;
    let mut f2 = problem.solve(x2)?.rss;
    let mut iterations = 0;
    while (hi - lo) > 1e-13 * guess {
        iterations += 1;
        if iterations > MAX_ITERATIONS {
            return Err(Error::NonConvergence(MAX_ITERATIONS));
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = problem.solve(x1)?.rss;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = problem.solve(x2)?.rss;
        }
    }
    let omega = 0.5 * (lo + hi);
    let edge = (omega - (guess - 1.5 * bin)).abs() < 1e-3 * bin || (omega - (guess + 1.5 * bin)).abs() < 1e-3 * bin;
    if edge {
        return Err(Error::NonConvergence(iterations));
    }

    finish(&problem, series, omega, iterations)
}

/// Linear fit with ω held at `omega`, for series whose modulation may be
/// absent. Never flagged, since there may be nothing to compare the
/// residual with.
pub fn fit_at_frequency(series: &PhaseSeries, omega: f64) -> Result<OracleFit> {
    let n = series.len();
    if n < 16 {
        return Err(invalid("phase", format!("need at least 16 samples, got {n}")));
    }
    if !(omega > 0.0) {
        return Err(invalid("frequency", "must be > 0"));
    }
    let times = &series.times;
    let span = series.span();
    let problem = Problem {
        times,
        values: DVector::from_column_slice(&series.phase),
        t_mid: 0.5 * (times[0] + times[n - 1]),
        t_half: 0.5 * span,
    };
    let mut fit = finish(&problem, series, omega, 0)?;
    fit.flagged = false;
    Ok(fit)
}

fn finish(problem: &Problem, series: &PhaseSeries, omega: f64, iterations: usize) -> Result<OracleFit> {
    let n = series.len();
    let lin = problem.solve(omega)?;
    let (p, q) = (lin.coeffs[0], lin.coeffs[1]);
    let seen = p.hypot(q);
    let modulation = seen / series.boxcar_gain(omega);
    let residual_rms = (lin.rss / n as f64).sqrt();
    Ok(OracleFit {
        frequency: omega,
        amplitude: 0.5 * modulation * omega,
        phase: normalize_phase(q.atan2(p)),
        stark_shift: lin.coeffs[2] / problem.t_half,
        modulation,
        residual_rms,
        flagged: residual_rms > RESIDUAL_FLAG_FRACTION * seen,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form accumulated phase of H = (δ/2 + Ω_e cos(ω_e t + φ_e)) σz.
    fn model(t: f64, amp: f64, w: f64, phi: f64, delta: f64) -> f64 {
        2.0 * amp / w * ((w * t + phi).sin() - phi.sin()) + delta * t
    }

    fn synthetic(amp: f64, w: f64, phi: f64, delta: f64) -> PhaseSeries {
        let times: Vec<f64> = (0..4000).map(|k| k as f64 * 5e-9).collect();
        let phase = times.iter().map(|&t| model(t, amp, w, phi, delta)).collect();
        PhaseSeries::new(times, phase).unwrap()
    }

    #[test]
    fn recovers_synthetic_parameters() {
        let cases = [
            (TAU * 4.03e3, TAU * 1.003125e6, 0.0, -TAU * 83e3),
            (TAU * 1.0e3, TAU * 0.77e6, 2.5, TAU * 10e3),
            (TAU * 20e3, TAU * 2.1e6, 5.9, 0.0),
        ];
        for (amp, w, phi, delta) in cases {
            let fit = fit_effective(&synthetic(amp, w, phi, delta)).unwrap();
            assert!((fit.frequency / w - 1.0).abs() < 1e-6, "{fit:?}");
            assert!((fit.amplitude / amp - 1.0).abs() < 1e-6, "{fit:?}");
            let dphi = crate::units::wrap_to_pi(fit.phase - phi);
            assert!(dphi.abs() < 1e-6, "{fit:?}");
            assert!((fit.stark_shift - delta).abs() < 1e-6 * delta.abs().max(amp), "{fit:?}");
            assert!(!fit.flagged);
            assert!(fit.residual_rms < 1e-9);
        }
    }

    #[test]
    fn too_short_series_is_refused() {
        let times: Vec<f64> = (0..400).map(|k| k as f64 * 5e-9).collect();
        let phase = times.iter().map(|&t| model(t, 1e4, TAU * 1e6, 0.0, 0.0)).collect();
        let series = PhaseSeries::new(times, phase).unwrap();
        assert!(matches!(fit_effective(&series), Err(Error::InsufficientSpan { .. })));
    }

    #[test]
    fn noisy_series_is_flagged() {
        let mut s = synthetic(TAU * 4e3, TAU * 1e6, 0.0, 0.0);
        let mut x = 0.5f64;
        for p in s.phase.iter_mut() {
            x = (x * 3.9 * (1.0 - x)).clamp(1e-6, 1.0 - 1e-6);
            *p += 0.05 * (x - 0.5);
        }
        let fit = fit_effective(&s).unwrap();
        assert!(fit.flagged, "{fit:?}");
    }
}
