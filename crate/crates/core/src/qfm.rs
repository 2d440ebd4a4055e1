//! Closed-form quantum frequency mixing on a two-level spin.
//!
//! Two transverse tones, a target at ω_s and a strong bias at ω_b, both far
//! detuned from the spin resonance ω₀, produce a longitudinal effective field
//! at the difference frequency ω_e = ω_s − ω_b:
//!
//! ```text
//! H_e ≈ (δ/2) σz + Ω_e cos(ω_e t + φ_e) σz
//! Ω_e = (Ω_s Ω_b / 2) · (ω₀/(ω_s² − ω₀²) + ω₀/(ω_b² − ω₀²))
//! δ   = −Ω_s² ω₀/(ω_s² − ω₀²) − Ω_b² ω₀/(ω_b² − ω₀²)
//! ```
//!
//! The formula for Ω_e is kept with its printed sign. Direct integration of the
//! lab-frame dynamics (see [`crate::oracle`]) shows the spin actually sees
//! `COUPLING_SIGN · Ω_e`; everything that turns an [`EffectiveSignal`] into a
//! spin phase goes through [`EffectiveSignal::spin_coupling`].

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::{self, normalize_phase};

/// Sign relating the longitudinal coupling felt by the spin to the Ω_e
/// formula above. Fixed by fitting lab-frame trajectories.
pub const COUPLING_SIGN: f64 = -1.0;

/// Default relative distance from ω₀ below which a tone counts as resonant.
pub const DEFAULT_POLE_EPSILON: f64 = 1e-12;

/// Default floor on |ω_s − ω_b| (2π·1 Hz).
pub const DEFAULT_DEGENERACY_FLOOR: f64 = 2.0 * PI;

/// Default validity threshold on drive-to-detuning ratios.
pub const DEFAULT_VALIDITY_THRESHOLD: f64 = 0.05;

/// One oscillating transverse drive `Ω cos(ω t + φ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldTone {
    /// Ω in rad/s (γ·B).
    pub amplitude: f64,
    /// ω in rad/s.
    pub frequency: f64,
    /// φ in [0, 2π).
    pub phase: f64,
}

impl FieldTone {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(invalid("amplitude", format!("must be finite and >= 0, got {amplitude}")));
        }
        if !(frequency > 0.0 && frequency.is_finite()) {
            return Err(invalid("frequency", format!("must be finite and > 0, got {frequency}")));
        }
        if !phase.is_finite() {
            return Err(invalid("phase", "must be finite"));
        }
        Ok(Self {
            amplitude,
            frequency,
            phase: normalize_phase(phase),
        })
    }

    /// Build from ordinary-frequency inputs: amplitude Ω/2π and frequency in Hz.
    pub fn from_hz(amplitude_hz: f64, frequency_hz: f64, phase: f64) -> Result<Self> {
        Self::new(
            units::hz_to_angular(amplitude_hz),
            units::hz_to_angular(frequency_hz),
            phase,
        )
    }

    /// Build from a field amplitude in tesla.
    pub fn from_tesla(amplitude_t: f64, frequency_hz: f64, phase: f64) -> Result<Self> {
        Self::new(
            units::tesla_to_angular(amplitude_t),
            units::hz_to_angular(frequency_hz),
            phase,
        )
    }

    pub fn with_amplitude(self, amplitude: f64) -> Self {
        Self { amplitude, ..self }
    }

    pub fn with_phase(self, phase: f64) -> Self {
        Self {
            phase: normalize_phase(phase),
            ..self
        }
    }

    /// Instantaneous value Ω cos(ω t + φ).
    #[inline]
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).cos()
    }
}

/// Which NV transition, together with |0⟩, forms the two-level system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NvBranch {
    MinusOne,
    PlusOne,
}

impl NvBranch {
    pub fn default_resonance_hz(self) -> f64 {
        match self {
            NvBranch::MinusOne => units::NV_MINUS_ONE_HZ,
            NvBranch::PlusOne => units::NV_PLUS_ONE_HZ,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NvBranch::MinusOne => "minus_one",
            NvBranch::PlusOne => "plus_one",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NvTwoLevel {
    /// ω₀ in rad/s.
    pub resonance: f64,
    pub branch: NvBranch,
}

impl NvTwoLevel {
    /// The branch at its default resonance (20.7 mT bias).
    pub fn from_branch(branch: NvBranch) -> Self {
        Self {
            resonance: units::hz_to_angular(branch.default_resonance_hz()),
            branch,
        }
    }

    pub fn with_resonance(branch: NvBranch, resonance: f64) -> Result<Self> {
        if !(resonance > 0.0 && resonance.is_finite()) {
            return Err(invalid("resonance", format!("must be > 0, got {resonance}")));
        }
        Ok(Self { resonance, branch })
    }
}

/// The down-converted longitudinal tone plus the static Stark shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveSignal {
    /// Ω_e in rad/s, signed as in the closed form.
    pub amplitude: f64,
    /// ω_e > 0 in rad/s (folded when ω_s < ω_b).
    pub frequency: f64,
    /// φ_e in [0, 2π).
    pub phase: f64,
    /// δ in rad/s.
    pub stark_shift: f64,
    /// True when ω_s < ω_b and the sign of (ω_e, φ_e) was flipped.
    #[serde(default)]
    pub folded: bool,
}

impl EffectiveSignal {
    /// A longitudinal tone applied directly along the quantization axis, with
    /// `coupling` being what the spin sees (so `spin_coupling() == coupling`).
    pub fn direct(coupling: f64, frequency: f64, phase: f64) -> Self {
        Self {
            amplitude: COUPLING_SIGN * coupling,
            frequency,
            phase: normalize_phase(phase),
            stark_shift: 0.0,
            folded: false,
        }
    }

    /// Longitudinal coupling actually felt by the spin: the spin Hamiltonian
    /// carries `spin_coupling() · cos(ω_e t + φ_e) σz`.
    pub fn spin_coupling(&self) -> f64 {
        COUPLING_SIGN * self.amplitude
    }

    /// (|coupling|, phase) with the sign absorbed into the phase.
    pub fn canonical_modulation(&self) -> (f64, f64) {
        let c = self.spin_coupling();
        if c < 0.0 {
            (-c, normalize_phase(self.phase + PI))
        } else {
            (c, self.phase)
        }
    }

    /// ω_s − ω_b before folding.
    pub fn signed_frequency(&self) -> f64 {
        if self.folded {
            -self.frequency
        } else {
            self.frequency
        }
    }

    /// φ_s − φ_b before folding, wrapped to [0, 2π).
    pub fn signed_phase(&self) -> f64 {
        if self.folded {
            normalize_phase(-self.phase)
        } else {
            self.phase
        }
    }

    /// `Ω_e cos(ω_e t + φ_e)`.
    pub fn value(&self, t: f64) -> f64 {
        self.amplitude * (self.frequency * t + self.phase).cos()
    }
}

/// Tolerances guarding the closed forms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QfmTolerances {
    pub pole_epsilon: f64,
    pub degeneracy_floor: f64,
}

impl Default for QfmTolerances {
    fn default() -> Self {
        Self {
            pole_epsilon: DEFAULT_POLE_EPSILON,
            degeneracy_floor: DEFAULT_DEGENERACY_FLOOR,
        }
    }
}

fn check_pole(tone: &FieldTone, nv: &NvTwoLevel, eps: f64) -> Result<()> {
    if (tone.frequency - nv.resonance).abs() <= eps * nv.resonance {
        return Err(Error::Pole {
            frequency: tone.frequency,
            resonance: nv.resonance,
        });
    }
    Ok(())
}

/// ω₀/(ω² − ω₀²), factored to avoid cancellation near the pole.
#[inline]
fn response(frequency: f64, resonance: f64) -> f64 {
    resonance / ((frequency - resonance) * (frequency + resonance))
}

pub fn effective_amplitude(signal: &FieldTone, bias: &FieldTone, nv: &NvTwoLevel) -> Result<f64> {
    effective_amplitude_with(signal, bias, nv, &QfmTolerances::default())
}

pub fn effective_amplitude_with(
    signal: &FieldTone,
    bias: &FieldTone,
    nv: &NvTwoLevel,
    tol: &QfmTolerances,
) -> Result<f64> {
    check_pole(signal, nv, tol.pole_epsilon)?;
    check_pole(bias, nv, tol.pole_epsilon)?;
    let w0 = nv.resonance;
    Ok(0.5
        * signal.amplitude
        * bias.amplitude
        * (response(signal.frequency, w0) + response(bias.frequency, w0)))
}

pub fn stark_shift(signal: &FieldTone, bias: &FieldTone, nv: &NvTwoLevel) -> Result<f64> {
    stark_shift_with(signal, bias, nv, &QfmTolerances::default())
}

pub fn stark_shift_with(
    signal: &FieldTone,
    bias: &FieldTone,
    nv: &NvTwoLevel,
    tol: &QfmTolerances,
) -> Result<f64> {
    check_pole(signal, nv, tol.pole_epsilon)?;
    check_pole(bias, nv, tol.pole_epsilon)?;
    let w0 = nv.resonance;
    Ok(-signal.amplitude.powi(2) * response(signal.frequency, w0)
        - bias.amplitude.powi(2) * response(bias.frequency, w0))
}

/// |Ω_s/Ω_e| for a unit target amplitude: the factor by which mixing
/// attenuates the target.
pub fn attenuation(signal: &FieldTone, bias: &FieldTone, nv: &NvTwoLevel) -> Result<f64> {
    let unit = signal.with_amplitude(1.0);
    let omega_e = effective_amplitude(&unit, bias, nv)?;
    if omega_e == 0.0 {
        return Err(invalid("bias", "zero effective coupling; attenuation is unbounded"));
    }
    Ok(1.0 / omega_e.abs())
}

pub fn down_convert(signal: &FieldTone, bias: &FieldTone, nv: &NvTwoLevel) -> Result<EffectiveSignal> {
    down_convert_with(signal, bias, nv, &QfmTolerances::default())
}

pub fn down_convert_with(
    signal: &FieldTone,
    bias: &FieldTone,
    nv: &NvTwoLevel,
    tol: &QfmTolerances,
) -> Result<EffectiveSignal> {
    let dw = signal.frequency - bias.frequency;
    if dw.abs() < tol.degeneracy_floor {
        return Err(Error::DegenerateFrequency(dw.abs()));
    }
    let amplitude = effective_amplitude_with(signal, bias, nv, tol)?;
    let stark_shift = stark_shift_with(signal, bias, nv, tol)?;
    let dphi = signal.phase - bias.phase;
    let folded = dw < 0.0;
    let (frequency, phase) = if folded { (-dw, -dphi) } else { (dw, dphi) };
    Ok(EffectiveSignal {
        amplitude,
        frequency,
        phase: normalize_phase(phase),
        stark_shift,
        folded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    /// |ω_s − ω₀|, |ω_s + ω₀|, |ω_b − ω₀|, |ω_b + ω₀| in rad/s.
    pub margins: [f64; 4],
    pub min_detuning: f64,
    /// Ω_s / min detuning.
    pub signal_ratio: f64,
    /// Ω_b / min detuning.
    pub bias_ratio: f64,
    /// |ω_s − ω_b| / min detuning.
    pub difference_ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ValidityReport {
    pub fn max_ratio(&self) -> f64 {
        self.signal_ratio
            .max(self.bias_ratio)
            .max(self.difference_ratio)
    }
}

/// Check the far-detuned conditions Ω_{s,b}, |ω_s − ω_b| ≪ |ω_{s,b} ± ω₀|.
pub fn validity_check(
    signal: &FieldTone,
    bias: &FieldTone,
    nv: &NvTwoLevel,
    threshold: f64,
) -> ValidityReport {
    let w0 = nv.resonance;
    let margins = [
        (signal.frequency - w0).abs(),
        signal.frequency + w0,
        (bias.frequency - w0).abs(),
        bias.frequency + w0,
    ];
    let min_detuning = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio = |x: f64| if min_detuning > 0.0 { x / min_detuning } else { f64::INFINITY };
    let signal_ratio = ratio(signal.amplitude);
    let bias_ratio = ratio(bias.amplitude);
    let difference_ratio = ratio((signal.frequency - bias.frequency).abs());
    let pass = signal_ratio < threshold && bias_ratio < threshold && difference_ratio < threshold;
    ValidityReport {
        margins,
        min_detuning,
        signal_ratio,
        bias_ratio,
        difference_ratio,
        threshold,
        pass,
    }
}
