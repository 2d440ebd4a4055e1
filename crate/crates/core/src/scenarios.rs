//! End-to-end runs built from the other modules: trace analysis with
//! calibrated peaks, phase sweeps, and Monte-Carlo noise floors.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::casr::{simulate_trace, CasrConfig, NoiseModel, TimeTrace};
use crate::error::{invalid, Result};
use crate::qfm::{self, EffectiveSignal, FieldTone, NvTwoLevel};
use crate::spectrum::{
    estimate_peak, fft_spectrum, find_peaks, noise_floor, phase_from_peak, Demodulation, NoiseFloor,
    PeakEstimate, PeakSearch, Spectrum, Window,
};
use crate::units::wrap_to_pi;

/// Everything read off one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceAnalysis {
    pub spectrum: Spectrum,
    pub peaks: Vec<PeakEstimate>,
    pub floor: Option<NoiseFloor>,
}

/// With several tones present each fundamental is scaled by J₀ of the
/// others' Φ_max; undo that by fixed-point iteration on the amplitudes.
fn joint_correction(peaks: &mut [PeakEstimate], demod: &Demodulation) {
    if peaks.len() < 2 {
        return;
    }
    let gain = demod.casr.phase_gain(demod.effective_frequency);
    let mut phis: Vec<f64> = peaks.iter().map(|p| p.amplitude.phase_amplitude).collect();
    for _ in 0..20 {
        let next: Vec<f64> = (0..peaks.len())
            .map(|i| {
                let others: f64 = (0..peaks.len()).filter(|&j| j != i).map(|j| bessel::j0(phis[j])).product();
                let scaled = peaks[i].amplitude.phase_amplitude;
                // single-tone inversion gave J₁(Φᵢ)·Πⱼ J₀(Φⱼ) ≈ J₁(scaled)
                let y = (bessel::j1(scaled) / others).min(bessel::J1_MAX);
                bessel::j1_inverse(y).unwrap_or(scaled)
            })
            .collect();
        let done = next.iter().zip(&phis).all(|(a, b)| (a - b).abs() < 1e-13);
        phis = next;
        if done {
            break;
        }
    }
    for (p, phi) in peaks.iter_mut().zip(phis) {
        let coupling = phi / gain;
        p.amplitude.phase_amplitude = phi;
        p.amplitude.effective_coupling = coupling;
        p.amplitude.effective_tesla = coupling / crate::units::GAMMA;
        p.amplitude.target_tesla = p.amplitude.effective_tesla * demod.attenuation;
    }
}

pub fn analyze_trace(
    trace: &TimeTrace,
    demod: &Demodulation,
    search: &PeakSearch,
    clip_dc: bool,
    window: Window,
) -> Result<TraceAnalysis> {
    let spectrum = fft_spectrum(trace, clip_dc, window)?;
    let found = find_peaks(&spectrum, search);
    let mut peaks = found
        .iter()
        .map(|p| estimate_peak(&spectrum, p, demod))
        .collect::<Result<Vec<_>>>()?;
    joint_correction(&mut peaks, demod);
    let exclusions: Vec<f64> = found.iter().map(|p| spectrum.frequency(p.bin)).collect();
    let floor = noise_floor(&spectrum, &exclusions, search.guard, Some(demod)).ok();
    Ok(TraceAnalysis { spectrum, peaks, floor })
}

/// Effective tones for a set of targets sharing one bias.
pub fn effective_signals(targets: &[FieldTone], bias: &FieldTone, nv: &NvTwoLevel) -> Result<Vec<EffectiveSignal>> {
    targets.iter().map(|s| qfm::down_convert(s, bias, nv)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepSpec {
    /// Target tone; its phase is overwritten by the sweep.
    pub signal: FieldTone,
    pub bias: FieldTone,
    pub nv: NvTwoLevel,
    pub casr: CasrConfig,
    pub steps: usize,
    /// Acquisition time per phase point, s.
    pub dwell: f64,
    pub noise: NoiseModel,
    pub seed: u64,
    pub window: Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepRow {
    pub applied: f64,
    pub recovered: f64,
    /// recovered − applied, wrapped to (−π, π].
    pub error: f64,
    pub re: f64,
    pub im: f64,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinusoidFit {
    pub amplitude: f64,
    pub phase: f64,
    pub offset: f64,
    pub r_squared: f64,
}

/// Least squares y ≈ a·cos x + b·sin x + c, reported as A·cos(x + θ) + c.
pub fn fit_sinusoid(x: &[f64], y: &[f64]) -> Result<SinusoidFit> {
    if x.len() != y.len() || x.len() < 4 {
        return Err(invalid("sweep", "need at least 4 matching points"));
    }
    let a = DMatrix::from_fn(x.len(), 3, |i, j| match j {
        0 => x[i].cos(),
        1 => x[i].sin(),
        _ => 1.0,
    });
    let v = DVector::from_column_slice(y);
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&v, 1e-14)
        .map_err(|e| invalid("sweep", e.to_string()))?;
    let resid = &v - &a * &coef;
    let mean = v.mean();
    let ss_tot: f64 = v.iter().map(|y| (y - mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - resid.norm_squared() / ss_tot } else { 0.0 };
    Ok(SinusoidFit {
        amplitude: coef[0].hypot(coef[1]),
        phase: (-coef[1]).atan2(coef[0]),
        offset: coef[2],
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepResult {
    pub rows: Vec<PhaseSweepRow>,
    /// Standard deviation of the phase error, rad.
    pub sigma_phase: f64,
    pub mean_error: f64,
    pub real_fit: SinusoidFit,
    pub imag_fit: SinusoidFit,
    /// Phase lag of the imaginary sinusoid behind the real one, wrapped.
    pub quadrature: f64,
    pub magnitude_mean: f64,
    pub magnitude_relative_std: f64,
    pub low_snr_points: usize,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Step φ_s through a full turn and read it back from the alias bin.
pub fn run_phase_sweep(spec: &PhaseSweepSpec) -> Result<PhaseSweepResult> {
    if spec.steps < 4 {
        return Err(invalid("steps", "need at least 4 phase points"));
    }
    let demod = Demodulation::for_target(&spec.signal, &spec.bias, &spec.nv, &spec.casr)?;
    let f_a = demod.alias.frequency;
    let rows = (0..spec.steps)
        .into_par_iter()
        .map(|j| {
            let applied = TAU * j as f64 / spec.steps as f64;
            let signal = spec.signal.with_phase(applied);
            let e = qfm::down_convert(&signal, &spec.bias, &spec.nv)?;
            let seed = spec.seed.wrapping_add(j as u64);
            let trace = simulate_trace(&[e], &spec.casr, spec.dwell, &spec.noise, seed)?;
            let spectrum = fft_spectrum(&trace, true, spec.window)?;
            let phase = phase_from_peak(&spectrum, f_a, &demod)?;
            let k = spectrum.bin_of(f_a).unwrap_or(0);
            let z = spectrum.bins[k];
            Ok((
                PhaseSweepRow {
                    applied,
                    recovered: phase.target,
                    error: wrap_to_pi(phase.target - applied),
                    re: z.re,
                    im: z.im,
                    magnitude: z.norm(),
                },
                phase.low_snr,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let low_snr_points = rows.iter().filter(|(_, low)| *low).count();
    let rows: Vec<PhaseSweepRow> = rows.into_iter().map(|(r, _)| r).collect();

    let errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
    let (mean_error, sigma_phase) = mean_std(&errors);
    let x: Vec<f64> = rows.iter().map(|r| r.applied).collect();
    let re: Vec<f64> = rows.iter().map(|r| r.re).collect();
    let im: Vec<f64> = rows.iter().map(|r| r.im).collect();
    let real_fit = fit_sinusoid(&x, &re)?;
    let imag_fit = fit_sinusoid(&x, &im)?;
    let mags: Vec<f64> = rows.iter().map(|r| r.magnitude).collect();
    let (magnitude_mean, magnitude_std) = mean_std(&mags);
    Ok(PhaseSweepResult {
        rows,
        sigma_phase,
        mean_error,
        real_fit,
        imag_fit,
        quadrature: wrap_to_pi(real_fit.phase - imag_fit.phase),
        magnitude_mean,
        magnitude_relative_std: if magnitude_mean > 0.0 { magnitude_std / magnitude_mean } else { 0.0 },
        low_snr_points,
    })
}

/// Counts of phase errors in bins of `width` radians centred on zero.
pub fn error_histogram(rows: &[PhaseSweepRow], width: f64) -> Vec<(f64, usize)> {
    if rows.is_empty() || !(width > 0.0) {
        return Vec::new();
    }
    let reach = rows.iter().map(|r| r.error.abs()).fold(0.0, f64::max);
    let half = (reach / width + 0.5).ceil() as i64;
    let mut counts = vec![0usize; (2 * half + 1) as usize];
    for r in rows {
        let k = (r.error / width).round() as i64 + half;
        counts[k.clamp(0, 2 * half) as usize] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| ((k as i64 - half) as f64 * width, c))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorStatistics {
    pub duration: f64,
    pub seeds: usize,
    /// Mean effective-unit floor, T.
    pub effective_mean: f64,
    /// Mean target-unit floor, T.
    pub target_mean: f64,
}

/// Mean spectral floors over `seeds` noise realizations of the same signals.
pub fn floor_monte_carlo(
    signals: &[EffectiveSignal],
    casr: &CasrConfig,
    noise: &NoiseModel,
    duration: f64,
    seeds: usize,
    first_seed: u64,
    demod: &Demodulation,
    search: &PeakSearch,
) -> Result<FloorStatistics> {
    if seeds == 0 {
        return Err(invalid("seeds", "must be >= 1"));
    }
    let floors = (0..seeds)
        .into_par_iter()
        .map(|i| {
            let trace = simulate_trace(signals, casr, duration, noise, first_seed.wrapping_add(i as u64))?;
            let a = analyze_trace(&trace, demod, search, true, Window::None)?;
            let f = a.floor.ok_or_else(|| invalid("duration", "too few bins for a noise floor"))?;
            Ok((f.effective_tesla.unwrap_or(0.0), f.target_tesla.unwrap_or(0.0)))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = seeds as f64;
    Ok(FloorStatistics {
        duration,
        seeds,
        effective_mean: floors.iter().map(|f| f.0).sum::<f64>() / n,
        target_mean: floors.iter().map(|f| f.1).sum::<f64>() / n,
    })
}
