//! Coherently averaged synchronized readout: one XY8-k block every T_seq,
//! each block turning the effective longitudinal tone into an accumulated
//! phase and the phase into a PL contrast sample.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::qfm::EffectiveSignal;
use crate::units::GAMMA;

/// Relative mismatch between τ and π/ω_e above which the sequence is
/// reported as off-resonant.
pub const TAU_MISMATCH_WARNING: f64 = 0.01;

/// How the per-block phase amplitude is computed from Ω_e/ω_e.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhasePrefactor {
    /// Φ_max = 2N·Ω_e/ω_e with both in rad/s.
    #[default]
    Angular,
    /// Φ_max = 4πN·Ω_e/ω_e, as the formula is sometimes printed.
    Literal,
}

impl PhasePrefactor {
    pub fn factor(self, pulses: u32) -> f64 {
        let n = f64::from(pulses);
        match self {
            PhasePrefactor::Angular => 2.0 * n,
            PhasePrefactor::Literal => 4.0 * PI * n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CasrConfig {
    /// XY8 repetition count k; the block has N = 8k π pulses.
    pub repetitions: u32,
    /// π-pulse spacing τ, seconds.
    pub pulse_spacing: f64,
    /// Full block duration T_seq, seconds. The sampling rate is 1/T_seq.
    pub block_duration: f64,
    /// Readout contrast scale c: S = ½(1 + c·sin Φ).
    pub contrast_scale: f64,
    pub prefactor: PhasePrefactor,
}

impl Default for CasrConfig {
    fn default() -> Self {
        Self {
            repetitions: 6,
            pulse_spacing: 0.5e-6,
            block_duration: 80e-6,
            contrast_scale: 1.0,
            prefactor: PhasePrefactor::Angular,
        }
    }
}

impl CasrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(invalid("repetitions", "must be >= 1"));
        }
        if !(self.pulse_spacing > 0.0 && self.pulse_spacing.is_finite()) {
            return Err(invalid("pulse_spacing", "must be > 0"));
        }
        if !(self.block_duration > 0.0 && self.block_duration.is_finite()) {
            return Err(invalid("block_duration", "must be > 0"));
        }
        if self.sensing_window() > self.block_duration * (1.0 + 1e-12) {
            return Err(invalid(
                "pulse_spacing",
                format!(
                    "sensing window N·τ = {:.3e} s exceeds the block duration {:.3e} s",
                    self.sensing_window(),
                    self.block_duration
                ),
            ));
        }
        if !(self.contrast_scale > 0.0 && self.contrast_scale <= 1.0) {
            return Err(invalid("contrast_scale", "must be in (0, 1]"));
        }
        Ok(())
    }

    /// N = 8k.
    pub fn pulse_count(&self) -> u32 {
        8 * self.repetitions
    }

    /// f_SR = 1/T_seq in Hz.
    pub fn sampling_rate(&self) -> f64 {
        1.0 / self.block_duration
    }

    /// N·τ.
    pub fn sensing_window(&self) -> f64 {
        f64::from(self.pulse_count()) * self.pulse_spacing
    }

    /// Effective angular frequency the sequence is tuned to, π/τ.
    pub fn resonant_frequency(&self) -> f64 {
        PI / self.pulse_spacing
    }

    /// Relative mismatch |τ − π/ω_e|/(π/ω_e) when above [`TAU_MISMATCH_WARNING`].
    pub fn tau_mismatch(&self, omega_e: f64) -> Option<f64> {
        let ideal = PI / omega_e;
        let rel = (self.pulse_spacing - ideal).abs() / ideal;
        (rel > TAU_MISMATCH_WARNING).then_some(rel)
    }

    /// Φ per unit |Ω_e| at effective frequency `omega_e`.
    pub fn phase_gain(&self, omega_e: f64) -> f64 {
        self.prefactor.factor(self.pulse_count()) / omega_e
    }

    /// Small-signal dS/dB at zero field for a tone at the sequence resonance,
    /// in contrast per tesla of effective field.
    pub fn slope(&self) -> f64 {
        0.5 * self.contrast_scale * self.phase_gain(self.resonant_frequency()) * GAMMA
    }
}

/// Per-block accumulated phase amplitude Φ_max ≥ 0.
pub fn max_phase(e: &EffectiveSignal, cfg: &CasrConfig) -> f64 {
    cfg.phase_gain(e.frequency) * e.amplitude.abs()
}

/// Readout contrast S(t) = ½(1 + c·sin Σᵢ Φᵢ cos(ω_{e,i} t + φ'ᵢ)), where φ'
/// carries the sign of the coupling felt by the spin.
pub fn envelope(t: f64, signals: &[EffectiveSignal], cfg: &CasrConfig) -> f64 {
    let total: f64 = signals
        .iter()
        .map(|e| {
            let (_, phase) = e.canonical_modulation();
            max_phase(e, cfg) * (e.frequency * t + phase).cos()
        })
        .sum();
    0.5 * (1.0 + cfg.contrast_scale * total.sin())
}

/// Additive white Gaussian readout noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    #[default]
    None,
    /// Standard deviation per sample in contrast units.
    Contrast { sigma: f64 },
    /// Sensitivity η in T/√Hz; the per-sample noise is η·√f_SR in field
    /// units, turned into contrast with the sequence slope.
    Magnetic { eta: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let v = match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Contrast { sigma } => sigma,
            NoiseModel::Magnetic { eta } => eta,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(invalid("noise", format!("must be finite and >= 0, got {v}")));
        }
        Ok(())
    }

    /// Per-sample standard deviation in contrast units.
    pub fn sample_sigma(&self, cfg: &CasrConfig) -> f64 {
        match *self {
            NoiseModel::None => 0.0,
            NoiseModel::Contrast { sigma } => sigma,
            NoiseModel::Magnetic { eta } => eta * cfg.sampling_rate().sqrt() * cfg.slope(),
        }
    }

    /// Per-sample standard deviation in tesla of effective field.
    pub fn sample_sigma_tesla(&self, cfg: &CasrConfig) -> f64 {
        self.sample_sigma(cfg) / cfg.slope()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTrace {
    /// Time of the first sample, seconds.
    pub start: f64,
    /// Sample period T_seq.
    pub period: f64,
    pub samples: Vec<f64>,
    pub config: CasrConfig,
    pub signals: Vec<EffectiveSignal>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl TimeTrace {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sampling_rate(&self) -> f64 {
        1.0 / self.period
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.period
    }

    #[inline]
    pub fn time(&self, m: usize) -> f64 {
        sample_time(self.start, self.period, m)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.time(m)).collect()
    }

    /// Samples with their mean removed.
    pub fn centered(&self) -> Vec<f64> {
        let mean = self.samples.iter().sum::<f64>() / self.len().max(1) as f64;
        self.samples.iter().map(|x| x - mean).collect()
    }
}

#[inline]
fn sample_time(start: f64, period: f64, m: usize) -> f64 {
    start + m as f64 * period
}

/// Number of samples in `duration`, which must be a whole number of blocks.
pub fn sample_count(duration: f64, cfg: &CasrConfig) -> Result<usize> {
    if !(duration >= cfg.block_duration * (1.0 - 1e-12)) || !duration.is_finite() {
        return Err(invalid(
            "duration",
            format!("must be at least one block ({:.3e} s), got {duration}", cfg.block_duration),
        ));
    }
    let exact = duration * cfg.sampling_rate();
    let m = exact.round();
    if (exact - m).abs() > 1e-9 * m {
        return Err(invalid(
            "duration",
            format!("{duration} s is not a whole number of {:.3e} s blocks", cfg.block_duration),
        ));
    }
    Ok(m as usize)
}

/// Sample the envelope at t = m·T_seq (m = 0…M−1) and add noise.
pub fn simulate_trace(
    signals: &[EffectiveSignal],
    cfg: &CasrConfig,
    duration: f64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<TimeTrace> {
    simulate_trace_from(0.0, signals, cfg, duration, noise, seed)
}

/// As [`simulate_trace`] with the first block at `start`.
pub fn simulate_trace_from(
    start: f64,
    signals: &[EffectiveSignal],
    cfg: &CasrConfig,
    duration: f64,
    noise: &NoiseModel,
    seed: u64,
) -> Result<TimeTrace> {
    cfg.validate()?;
    noise.validate()?;
    if let Some(bad) = signals.iter().find(|e| !(e.frequency > 0.0)) {
        return Err(invalid("signals", format!("effective frequency must be > 0, got {}", bad.frequency)));
    }
    let m = sample_count(duration, cfg)?;
    let period = cfg.block_duration;
    let mut samples: Vec<f64> = (0..m)
        .map(|k| envelope(sample_time(start, period, k), signals, cfg))
        .collect();
    let sigma = noise.sample_sigma(cfg);
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid("noise", e.to_string()))?;
        for s in samples.iter_mut() {
            *s += normal.sample(&mut rng);
        }
    }
    Ok(TimeTrace {
        start,
        period,
        samples,
        config: *cfg,
        signals: signals.to_vec(),
        noise: *noise,
        seed,
    })
}

/// Which side of the nearest sampling harmonic the effective tone sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldBranch {
    /// f_e = n·f_SR + f_a.
    Upper,
    /// f_e = n·f_SR − f_a; the alias runs backwards and its phase is conjugated.
    Lower,
}

impl FoldBranch {
    pub fn sign(self) -> f64 {
        match self {
            FoldBranch::Upper => 1.0,
            FoldBranch::Lower => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alias {
    /// f_a in Hz, 0 ≤ f_a ≤ f_SR/2.
    pub frequency: f64,
    pub harmonic: i64,
    pub branch: FoldBranch,
}

/// n = nearest integer to f_e/f_SR (ties to even), f_a = |f_e − n·f_SR|.
pub fn alias_frequency(f_e: f64, f_sr: f64) -> Result<Alias> {
    if !(f_e > 0.0 && f_sr > 0.0) {
        return Err(invalid("frequency", "f_e and f_SR must be > 0"));
    }
    let n = (f_e / f_sr).round_ties_even();
    let diff = f_e - n * f_sr;
    Ok(Alias {
        frequency: diff.abs(),
        harmonic: n as i64,
        branch: if diff >= 0.0 { FoldBranch::Upper } else { FoldBranch::Lower },
    })
}

/// Both effective frequencies compatible with an alias at harmonic n:
/// (n·f_SR − f_a, n·f_SR + f_a).
pub fn alias_candidates(f_a: f64, harmonic: i64, f_sr: f64) -> [f64; 2] {
    let base = harmonic as f64 * f_sr;
    [base - f_a, base + f_a]
}
