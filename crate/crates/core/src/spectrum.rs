//! Single-sided spectra of CASR traces, peak search with sub-bin refinement,
//! and the calibration chain from an alias bin back to effective and target
//! field amplitudes and phases.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bessel;
use crate::casr::{alias_frequency, Alias, CasrConfig, FoldBranch, TimeTrace};
use crate::error::{invalid, Error, Result};
use crate::qfm::{self, FieldTone, NvTwoLevel};
use crate::units::{angular_to_hz, normalize_phase, GAMMA};

/// Bins excluded on each side of a peak when estimating the floor.
pub const DEFAULT_GUARD_BINS: usize = 10;

/// Fewest bins a noise-floor estimate may rest on.
pub const MIN_FLOOR_BINS: usize = 100;

/// Bins further than this many standard deviations above the mean are
/// left out of the floor.
pub const FLOOR_CLIP: f64 = 5.0;

/// Phase estimates below this SNR are marked unreliable.
pub const LOW_SNR_PHASE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    #[default]
    None,
    Hann,
}

impl Window {
    fn weights(self, m: usize) -> Option<Vec<f64>> {
        match self {
            Window::None => None,
            // periodic Hann: exact zeros between on-grid tones
            Window::Hann => Some(
                (0..m)
                    .map(|k| 0.5 * (1.0 - (TAU * k as f64 / m as f64).cos()))
                    .collect(),
            ),
        }
    }

    /// Bin spacing factor applied to the three-point Jacobsen estimate.
    fn refinement_scale(self) -> f64 {
        match self {
            Window::None => 1.0,
            Window::Hann => 2.0,
        }
    }
}

/// Single-sided spectrum, normalized so `A·cos(2πft + φ)` on a bin reads
/// `A·e^{iφ}` there, with φ referenced to the first sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    /// Δf = 1/duration, Hz.
    pub resolution: f64,
    pub sampling_rate: f64,
    /// Number of time samples M.
    pub samples: usize,
    /// Time of the first sample of the source trace.
    pub start: f64,
    pub window: Window,
    pub clip_dc: bool,
    /// Bins 0..=M/2.
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn frequency(&self, k: usize) -> f64 {
        k as f64 * self.resolution
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.frequency(k)).collect()
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|z| z.norm()).collect()
    }

    /// Index of the bin nearest `f`, if `f` lies on the axis.
    pub fn bin_of(&self, f: f64) -> Option<usize> {
        let k = (f / self.resolution).round();
        (k >= 0.0 && (k as usize) < self.len()).then_some(k as usize)
    }

    fn has_nyquist(&self) -> bool {
        self.samples.is_multiple_of(2)
    }

    /// Mean square of the (DC-clipped, unwindowed) samples implied by the
    /// bins: c₀² + ½Σ|c_k|² + c_{M/2}².
    pub fn mean_square(&self) -> f64 {
        let last = self.len() - 1;
        self.bins
            .iter()
            .enumerate()
            .map(|(k, z)| {
                if k == 0 || (k == last && self.has_nyquist()) {
                    z.norm_sqr()
                } else {
                    0.5 * z.norm_sqr()
                }
            })
            .sum()
    }
}

pub fn fft_spectrum(trace: &TimeTrace, clip_dc: bool, window: Window) -> Result<Spectrum> {
    spectrum_of(&trace.samples, trace.sampling_rate(), trace.start, clip_dc, window)
}

/// Spectrum of uniformly sampled real data.
pub fn spectrum_of(
    samples: &[f64],
    sampling_rate: f64,
    start: f64,
    clip_dc: bool,
    window: Window,
) -> Result<Spectrum> {
    let m = samples.len();
    if m < 2 {
        return Err(invalid("trace", format!("need at least 2 samples, got {m}")));
    }
    if !(sampling_rate > 0.0) {
        return Err(invalid("sampling_rate", "must be > 0"));
    }
    let mean = if clip_dc {
        samples.iter().sum::<f64>() / m as f64
    } else {
        0.0
    };
    let weights = window.weights(m);
    let mut buf: Vec<Complex64> = samples
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let w = weights.as_ref().map_or(1.0, |w| w[k]);
            Complex64::new((x - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let gain: f64 = weights.as_ref().map_or(m as f64, |w| w.iter().sum());
    let half = m / 2;
    let bins = buf[..=half]
        .iter()
        .enumerate()
        .map(|(k, z)| {
            if k == 0 || (2 * k == m) {
                z / gain
            } else {
                z * (2.0 / gain)
            }
        })
        .collect();
    Ok(Spectrum {
        resolution: sampling_rate / m as f64,
        sampling_rate,
        samples: m,
        start,
        window,
        clip_dc,
        bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakSearch {
    /// Peak height over the noise floor.
    pub min_snr: f64,
    /// Peak height over the tallest peak; keeps small mixing products out.
    pub min_relative: f64,
    pub guard: usize,
}

impl Default for PeakSearch {
    fn default() -> Self {
        Self {
            min_snr: 10.0,
            min_relative: 0.05,
            guard: DEFAULT_GUARD_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub bin: usize,
    /// Refined frequency, Hz.
    pub frequency: f64,
    /// Refinement offset from `bin`, in bins.
    pub offset: f64,
    /// Magnitude at `bin`.
    pub magnitude: f64,
    /// Complex value at `bin`.
    pub value: Complex64,
    /// magnitude / floor; infinite on a noiseless spectrum.
    pub snr: f64,
}

/// Three-point Jacobsen estimate, exact for a lone tone under the
/// rectangular window and (scaled by 2) under the Hann window.
fn refine(spec: &Spectrum, k: usize) -> f64 {
    if k == 0 || k + 1 >= spec.len() {
        return 0.0;
    }
    let (a, b, c) = (spec.bins[k - 1], spec.bins[k], spec.bins[k + 1]);
    let den = 2.0 * b - a - c;
    if den.norm() == 0.0 {
        return 0.0;
    }
    let d = -((c - a) / den).re * spec.window.refinement_scale();
    d.clamp(-0.5, 0.5)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Usable floor bins: not DC, not Nyquist, not within `guard` of any excluded bin.
fn floor_mask(spec: &Spectrum, excluded: &[usize], guard: usize) -> Vec<bool> {
    let n = spec.len();
    let mut keep = vec![true; n];
    keep[0] = false;
    if spec.has_nyquist() {
        keep[n - 1] = false;
    }
    for &k in excluded {
        let lo = k.saturating_sub(guard);
        let hi = (k + guard).min(n - 1);
        keep[lo..=hi].iter_mut().for_each(|x| *x = false);
    }
    keep
}

fn magnitude_std(spec: &Spectrum, keep: &[bool]) -> Result<(f64, usize)> {
    let mut mags: Vec<f64> = spec
        .bins
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(z, _)| z.norm())
        .collect();
    // weak spectral lines (harmonics, intermodulation) are clipped so the
    // figure tracks the noise alone
    loop {
        let n = mags.len();
        if n < MIN_FLOOR_BINS {
            return Err(Error::InsufficientBins {
                available: n,
                required: MIN_FLOOR_BINS,
            });
        }
        let mean = mags.iter().sum::<f64>() / n as f64;
        let std = (mags.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        let limit = mean + FLOOR_CLIP * std;
        let before = mags.len();
        if std > 0.0 {
            mags.retain(|&x| x <= limit);
        }
        if mags.len() == before {
            return Ok((std, n));
        }
    }
}

/// Local maxima standing out from the floor and from the tallest peak.
pub fn find_peaks(spec: &Spectrum, search: &PeakSearch) -> Vec<Peak> {
    let n = spec.len();
    if n < 3 {
        return Vec::new();
    }
    let mags = spec.magnitudes();
    let last = n - 1;
    let maxima: Vec<usize> = (1..last)
        .filter(|&k| mags[k] > mags[k - 1] && mags[k] >= mags[k + 1])
        .collect();
    let tallest = maxima.iter().map(|&k| mags[k]).fold(0.0, f64::max);
    if tallest == 0.0 {
        return Vec::new();
    }

    // Rayleigh magnitudes: std ≈ 0.5563·median, a first guess robust to peaks
    let mut inner: Vec<f64> = mags[1..last].to_vec();
    let rough = 0.5563 * median(&mut inner);
    let candidates: Vec<usize> = maxima
        .iter()
        .copied()
        .filter(|&k| mags[k] >= search.min_relative * tallest && mags[k] >= search.min_snr * rough)
        .collect();
    let floor = match magnitude_std(spec, &floor_mask(spec, &candidates, search.guard)) {
        Ok((f, _)) => f,
        Err(_) => rough,
    };

    candidates
        .into_iter()
        .filter_map(|k| {
            let snr = if floor > 0.0 { mags[k] / floor } else { f64::INFINITY };
            (snr >= search.min_snr).then(|| {
                let offset = refine(spec, k);
                Peak {
                    bin: k,
                    frequency: (k as f64 + offset) * spec.resolution,
                    offset,
                    magnitude: mags[k],
                    value: spec.bins[k],
                    snr,
                }
            })
        })
        .collect()
}

/// Side of the bias tone the target sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSide {
    /// f_s = f_b + f_e.
    Above,
    /// f_s = f_b − f_e.
    Below,
}

/// f_s = f_b ± (n·f_SR ± f_a) for the chosen fold branch and side.
pub fn map_alias_to_target(
    f_a: f64,
    bias_hz: f64,
    f_sr: f64,
    harmonic: i64,
    branch: FoldBranch,
    side: TargetSide,
) -> f64 {
    let f_e = harmonic as f64 * f_sr + branch.sign() * f_a;
    match side {
        TargetSide::Above => bias_hz + f_e,
        TargetSide::Below => bias_hz - f_e,
    }
}

/// The operator's prior on the chain from target tone to alias bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Demodulation {
    pub casr: CasrConfig,
    /// ω_e in rad/s.
    pub effective_frequency: f64,
    pub alias: Alias,
    /// Sign of the spin coupling for a positive target amplitude.
    pub coupling_sign: f64,
    /// Bias tone; `None` when the tone is applied directly along z.
    pub bias: Option<FieldTone>,
    pub side: TargetSide,
    /// |Ω_s/Ω_e|, 1 for a direct tone.
    pub attenuation: f64,
}

impl Demodulation {
    /// Chain for a target near `prior` mixed with `bias`. Only the prior's
    /// frequency matters.
    pub fn for_target(prior: &FieldTone, bias: &FieldTone, nv: &NvTwoLevel, casr: &CasrConfig) -> Result<Self> {
        let unit = prior.with_amplitude(1.0).with_phase(0.0);
        let e = qfm::down_convert(&unit, &bias.with_phase(0.0), nv)?;
        if e.amplitude == 0.0 {
            return Err(invalid("bias", "zero effective coupling"));
        }
        Ok(Self {
            casr: *casr,
            effective_frequency: e.frequency,
            alias: alias_frequency(angular_to_hz(e.frequency), casr.sampling_rate())?,
            coupling_sign: e.spin_coupling().signum(),
            bias: Some(*bias),
            side: if e.folded { TargetSide::Below } else { TargetSide::Above },
            attenuation: 1.0 / e.amplitude.abs(),
        })
    }

    /// Chain for a longitudinal tone at `omega_e` applied directly.
    pub fn direct(omega_e: f64, casr: &CasrConfig) -> Result<Self> {
        if !(omega_e > 0.0) {
            return Err(invalid("effective_frequency", "must be > 0"));
        }
        Ok(Self {
            casr: *casr,
            effective_frequency: omega_e,
            alias: alias_frequency(angular_to_hz(omega_e), casr.sampling_rate())?,
            coupling_sign: 1.0,
            bias: None,
            side: TargetSide::Above,
            attenuation: 1.0,
        })
    }

    /// Φ per unit contrast in the small-signal limit, turned into tesla of
    /// effective field.
    fn tesla_per_contrast(&self) -> f64 {
        let gain = self.casr.phase_gain(self.effective_frequency);
        1.0 / (0.5 * self.casr.contrast_scale * gain * GAMMA)
    }

    /// Alias sits on f_SR/4, where every odd harmonic of the phase
    /// modulation folds onto the same bin.
    fn quarter_rate(&self, spec: &Spectrum) -> bool {
        (4.0 * self.alias.frequency - spec.sampling_rate).abs() < 2.0 * spec.resolution
    }

    pub fn target_frequency(&self, f_a: f64) -> Option<f64> {
        self.bias.map(|b| {
            map_alias_to_target(
                f_a,
                angular_to_hz(b.frequency),
                self.casr.sampling_rate(),
                self.alias.harmonic,
                self.alias.branch,
                self.side,
            )
        })
    }
}

fn alias_bin(spec: &Spectrum, f_a: f64) -> Result<usize> {
    let k = spec.bin_of(f_a).ok_or(Error::NoPeak(f_a))?;
    if k == 0 || (spec.has_nyquist() && k == spec.len() - 1) {
        return Err(invalid("frequency", "alias on DC or Nyquist carries no phase"));
    }
    Ok(k)
}

/// (Φ·cos ψ, Φ·sin ψ) from the bin, in the alias's own sense of rotation.
fn quadrature(z: Complex64, c: f64) -> (f64, f64) {
    let arc = |v: f64| (2.0 * v / c).clamp(-1.0, 1.0).asin();
    (arc(z.re), arc(z.im))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    /// φ_e in [0, 2π), closed-form convention.
    pub effective: f64,
    /// φ_s in [0, 2π); equals `effective` for a direct tone.
    pub target: f64,
    pub snr: Option<f64>,
    pub low_snr: bool,
}

/// Recover φ_e and φ_s from the bin at `f_a`.
pub fn phase_from_peak(spec: &Spectrum, f_a: f64, demod: &Demodulation) -> Result<PhaseEstimate> {
    let k = alias_bin(spec, f_a)?;
    let z = spec.bins[k];
    let s = demod.alias.branch.sign();
    let seen = if demod.quarter_rate(spec) {
        let (x, y) = quadrature(z, demod.casr.contrast_scale);
        y.atan2(x)
    } else {
        z.arg()
    };
    // bin ∝ exp(i·s·(ω_e·t₀ + φ')), φ' = φ_e (+π when the spin sees −Ω_e)
    let canonical = s * seen - demod.effective_frequency * spec.start;
    let flip = if demod.coupling_sign < 0.0 { PI } else { 0.0 };
    let effective = normalize_phase(canonical - flip);
    let target = match (demod.bias, demod.side) {
        (None, _) => effective,
        (Some(b), TargetSide::Above) => normalize_phase(effective + b.phase),
        (Some(b), TargetSide::Below) => normalize_phase(b.phase - effective),
    };
    let snr = noise_floor(spec, &[f_a], DEFAULT_GUARD_BINS, None)
        .ok()
        .map(|f| if f.contrast > 0.0 { z.norm() / f.contrast } else { f64::INFINITY });
    Ok(PhaseEstimate {
        effective,
        target,
        snr,
        low_snr: snr.is_some_and(|s| s < LOW_SNR_PHASE),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeEstimate {
    /// |bin| in contrast units.
    pub contrast: f64,
    /// Φ_max inferred from the bin.
    pub phase_amplitude: f64,
    /// |Ω_e| in rad/s.
    pub effective_coupling: f64,
    pub effective_tesla: f64,
    pub target_tesla: f64,
}

/// Invert the bin at `f_a` through J₁ (or the exact quarter-rate form) to Ω_e
/// and on to the target amplitude.
pub fn amplitude_from_peak(spec: &Spectrum, f_a: f64, demod: &Demodulation) -> Result<AmplitudeEstimate> {
    let k = alias_bin(spec, f_a)?;
    let z = spec.bins[k];
    let c = demod.casr.contrast_scale;
    let phase_amplitude = if demod.quarter_rate(spec) {
        let (x, y) = quadrature(z, c);
        x.hypot(y)
    } else {
        bessel::j1_inverse(z.norm() / c)?
    };
    let effective_coupling = phase_amplitude / demod.casr.phase_gain(demod.effective_frequency);
    let effective_tesla = effective_coupling / GAMMA;
    Ok(AmplitudeEstimate {
        contrast: z.norm(),
        phase_amplitude,
        effective_coupling,
        effective_tesla,
        target_tesla: effective_tesla * demod.attenuation,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    /// Standard deviation of bin magnitudes, contrast units.
    pub contrast: f64,
    pub effective_tesla: Option<f64>,
    pub target_tesla: Option<f64>,
    pub bins: usize,
}

/// Spread of bin magnitudes away from DC, Nyquist and ±`guard` bins around
/// each excluded frequency.
pub fn noise_floor(
    spec: &Spectrum,
    exclusions: &[f64],
    guard: usize,
    demod: Option<&Demodulation>,
) -> Result<NoiseFloor> {
    let excluded: Vec<usize> = exclusions.iter().filter_map(|&f| spec.bin_of(f)).collect();
    let (contrast, bins) = magnitude_std(spec, &floor_mask(spec, &excluded, guard))?;
    let effective = demod.map(|d| contrast * d.tesla_per_contrast());
    Ok(NoiseFloor {
        contrast,
        effective_tesla: effective,
        target_tesla: effective.zip(demod).map(|(e, d)| e * d.attenuation),
        bins,
    })
}

/// Fully calibrated reading of one detected peak.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakEstimate {
    pub peak: Peak,
    pub amplitude: AmplitudeEstimate,
    pub phase: PhaseEstimate,
    /// Target frequency implied by the alias and the prior, Hz.
    pub target_frequency: Option<f64>,
}

pub fn estimate_peak(spec: &Spectrum, peak: &Peak, demod: &Demodulation) -> Result<PeakEstimate> {
    let f = spec.frequency(peak.bin);
    Ok(PeakEstimate {
        peak: *peak,
        amplitude: amplitude_from_peak(spec, f, demod)?,
        phase: phase_from_peak(spec, f, demod)?,
        target_frequency: demod.target_frequency(peak.frequency),
    })
}
