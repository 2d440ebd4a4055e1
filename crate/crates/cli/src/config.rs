//! Experiment configuration: TOML files (`.cfg` presets) or the provenance
//! block of a JSON output.

use std::f64::consts::TAU;
use std::path::Path;

use qfm_casr::casr::{CasrConfig, NoiseModel, PhasePrefactor};
use qfm_casr::oracle::{AgreementBounds, Frame, IntegrationConfig, DEFAULT_BOUNDS, DEFAULT_STEPS_PER_PERIOD};
use qfm_casr::qfm::{self, EffectiveSignal, FieldTone, NvBranch, NvTwoLevel};
use qfm_casr::scenarios::PhaseSweepSpec;
use qfm_casr::sensitivity::{BiasRule, DEFAULT_BIAS_OFFSET_HZ};
use qfm_casr::spectrum::{Demodulation, PeakSearch, Window, DEFAULT_GUARD_BINS};
use qfm_casr::units::{hz_to_angular, GAMMA};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub nv: NvSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<ToneSpec>,
    #[serde(default)]
    pub targets: Vec<ToneSpec>,
    #[serde(default)]
    pub casr: CasrSection,
    #[serde(default)]
    pub acquisition: Acquisition,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_sweep: Option<PhaseSweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvSection {
    pub branch: NvBranch,
    /// Overrides the branch's default resonance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resonance_hz: Option<f64>,
}

impl Default for NvSection {
    fn default() -> Self {
        Self {
            branch: NvBranch::MinusOne,
            resonance_hz: None,
        }
    }
}

/// A tone; give the amplitude either as Ω/2π in Hz or as a field in tesla.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_hz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude_t: Option<f64>,
    pub frequency_hz: f64,
    #[serde(default)]
    pub phase_deg: f64,
}

impl ToneSpec {
    fn amplitude(&self, field: &str) -> Result<f64> {
        match (self.amplitude_hz, self.amplitude_t) {
            (Some(hz), None) => Ok(hz_to_angular(hz)),
            (None, Some(t)) => Ok(GAMMA * t),
            _ => Err(CliError::schema(field, "give exactly one of amplitude_hz, amplitude_t")),
        }
    }

    pub fn tone(&self, field: &str) -> Result<FieldTone> {
        let amplitude = self.amplitude(field)?;
        if !(amplitude >= 0.0 && amplitude.is_finite()) {
            return Err(CliError::schema(field, "amplitude must be finite and >= 0"));
        }
        if !(self.frequency_hz > 0.0 && self.frequency_hz.is_finite()) {
            return Err(CliError::schema(&format!("{field}.frequency_hz"), "must be > 0"));
        }
        if !self.phase_deg.is_finite() {
            return Err(CliError::schema(&format!("{field}.phase_deg"), "must be finite"));
        }
        FieldTone::new(amplitude, hz_to_angular(self.frequency_hz), self.phase_deg.to_radians())
            .map_err(|e| CliError::schema(field, e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CasrSection {
    pub repetitions: u32,
    pub pulse_spacing_s: f64,
    pub block_duration_s: f64,
    pub contrast_scale: f64,
    pub prefactor: PhasePrefactor,
}

impl Default for CasrSection {
    fn default() -> Self {
        let c = CasrConfig::default();
        Self {
            repetitions: c.repetitions,
            pulse_spacing_s: c.pulse_spacing,
            block_duration_s: c.block_duration,
            contrast_scale: c.contrast_scale,
            prefactor: c.prefactor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Acquisition {
    pub duration_s: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSection {
    #[default]
    None,
    /// Per-sample standard deviation in contrast units.
    Contrast { sigma: f64 },
    /// Effective-field sensitivity, T/√Hz.
    Magnetic { eta: f64 },
}

impl NoiseSection {
    pub fn model(&self) -> NoiseModel {
        match *self {
            NoiseSection::None => NoiseModel::None,
            NoiseSection::Contrast { sigma } => NoiseModel::Contrast { sigma },
            NoiseSection::Magnetic { eta } => NoiseModel::Magnetic { eta },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub clip_dc: bool,
    pub window: Window,
    pub min_snr: f64,
    pub min_relative: f64,
    pub guard_bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let p = PeakSearch::default();
        Self {
            clip_dc: false,
            window: Window::None,
            min_snr: p.min_snr,
            min_relative: p.min_relative,
            guard_bins: DEFAULT_GUARD_BINS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub points: usize,
    /// ω_b = ω_s − 2π·offset.
    pub bias_offset_hz: f64,
    /// Ω_b/2π.
    pub bias_amplitude_hz: f64,
    /// Effective-signal sensitivity, T/√Hz; falls back to the magnetic noise η.
    pub eta_effective: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            start_hz: 10e6,
            stop_hz: 4e9,
            points: 500,
            bias_offset_hz: DEFAULT_BIAS_OFFSET_HZ,
            bias_amplitude_hz: 4.3e6,
            eta_effective: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseSweepSection {
    pub steps: usize,
    pub dwell_s: f64,
    pub histogram_bin_deg: f64,
}

impl Default for PhaseSweepSection {
    fn default() -> Self {
        Self {
            steps: 360,
            dwell_s: 1.0,
            histogram_bin_deg: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub duration_s: f64,
    pub steps_per_period: f64,
    pub record_every: usize,
    pub frame: Frame,
    /// Relative bound on Ω_e.
    pub amplitude_bound: f64,
    /// Relative bound on ω_e.
    pub frequency_bound: f64,
    pub phase_bound_deg: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self {
            duration_s: 20e-6,
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            record_every: 25,
            frame: Frame::Rotating,
            amplitude_bound: DEFAULT_BOUNDS.amplitude,
            frequency_bound: DEFAULT_BOUNDS.frequency,
            phase_bound_deg: DEFAULT_BOUNDS.phase.to_degrees(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    pub format: Format,
}

#[derive(Deserialize)]
struct Provenance {
    config: ExperimentConfig,
}

impl ExperimentConfig {
    /// Read a TOML config, or the `config` block of a JSON output file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str::<Provenance>(text)
                .map_err(|e| CliError::schema(origin, e.to_string()))?
                .config
        } else {
            toml::from_str(text).map_err(|e| CliError::schema(origin, e.to_string()))?
        };
        cfg.validate(origin)?;
        Ok(cfg)
    }

    /// Checks that do not depend on which command runs.
    pub fn validate(&self, origin: &str) -> Result<()> {
        let bad = |field: &str, reason: &str| CliError::schema(origin, format!("{field}: {reason}"));
        self.nv()?;
        if let Some(b) = &self.bias {
            b.tone("bias")?;
        }
        for (i, t) in self.targets.iter().enumerate() {
            t.tone(&format!("targets[{i}]"))?;
        }
        self.casr()?;
        if !(self.acquisition.duration_s >= 0.0 && self.acquisition.duration_s.is_finite()) {
            return Err(bad("acquisition.duration_s", "must be finite and >= 0"));
        }
        self.noise.model().validate().map_err(|e| bad("noise", &e.to_string()))?;
        let a = &self.analysis;
        if !(a.min_snr >= 0.0 && a.min_relative >= 0.0 && a.min_relative <= 1.0) {
            return Err(bad("analysis", "min_snr must be >= 0 and min_relative in [0, 1]"));
        }
        if let Some(s) = &self.sweep {
            if !(s.start_hz > 0.0 && s.stop_hz > s.start_hz && s.stop_hz <= 10e9) {
                return Err(bad("sweep", "need 0 < start_hz < stop_hz <= 10 GHz"));
            }
            if s.points < 2 {
                return Err(bad("sweep.points", "must be >= 2"));
            }
            if !(s.bias_amplitude_hz > 0.0 && s.bias_offset_hz.is_finite()) {
                return Err(bad("sweep", "bias_amplitude_hz must be > 0"));
            }
            if s.eta_effective.is_some_and(|e| !(e >= 0.0)) {
                return Err(bad("sweep.eta_effective", "must be >= 0"));
            }
        }
        if let Some(p) = &self.phase_sweep {
            if p.steps < 4 || !(p.dwell_s > 0.0) || !(p.histogram_bin_deg > 0.0) {
                return Err(bad("phase_sweep", "need steps >= 4, dwell_s > 0, histogram_bin_deg > 0"));
            }
        }
        if let Some(o) = &self.oracle {
            if !(o.duration_s > 0.0 && o.steps_per_period > 0.0 && o.record_every > 0) {
                return Err(bad("oracle", "duration_s, steps_per_period and record_every must be > 0"));
            }
            if !(o.amplitude_bound > 0.0 && o.frequency_bound > 0.0 && o.phase_bound_deg > 0.0) {
                return Err(bad("oracle", "bounds must be > 0"));
            }
        }
        Ok(())
    }

    pub fn nv(&self) -> Result<NvTwoLevel> {
        match self.nv.resonance_hz {
            None => Ok(NvTwoLevel::from_branch(self.nv.branch)),
            Some(f) => NvTwoLevel::with_resonance(self.nv.branch, hz_to_angular(f))
                .map_err(|e| CliError::schema("nv.resonance_hz", e.to_string())),
        }
    }

    pub fn casr(&self) -> Result<CasrConfig> {
        let c = &self.casr;
        let cfg = CasrConfig {
            repetitions: c.repetitions,
            pulse_spacing: c.pulse_spacing_s,
            block_duration: c.block_duration_s,
            contrast_scale: c.contrast_scale,
            prefactor: c.prefactor,
        };
        cfg.validate().map_err(|e| CliError::schema("casr", e.to_string()))?;
        Ok(cfg)
    }

    pub fn bias(&self) -> Result<Option<FieldTone>> {
        self.bias.as_ref().map(|b| b.tone("bias")).transpose()
    }

    pub fn targets(&self) -> Result<Vec<FieldTone>> {
        self.targets
            .iter()
            .enumerate()
            .map(|(i, t)| t.tone(&format!("targets[{i}]")))
            .collect()
    }

    fn first_target(&self) -> Result<FieldTone> {
        self.targets()?
            .into_iter()
            .next()
            .ok_or_else(|| CliError::schema("targets", "at least one target tone is required"))
    }

    fn required_bias(&self) -> Result<FieldTone> {
        self.bias()?
            .ok_or_else(|| CliError::schema("bias", "a bias tone is required"))
    }

    /// What the spin sees: mixed with the bias when there is one, otherwise
    /// each target applied directly along z.
    pub fn effective_signals(&self) -> Result<Vec<EffectiveSignal>> {
        let nv = self.nv()?;
        let targets = self.targets()?;
        match self.bias()? {
            Some(bias) => Ok(targets
                .iter()
                .map(|t| qfm::down_convert(t, &bias, &nv))
                .collect::<qfm_casr::Result<Vec<_>>>()?),
            None => Ok(targets
                .iter()
                .map(|t| EffectiveSignal::direct(t.amplitude, t.frequency, t.phase))
                .collect()),
        }
    }

    /// Demodulation prior taken from the first target.
    pub fn demodulation(&self) -> Result<Demodulation> {
        let target = self.first_target()?;
        let casr = self.casr()?;
        match self.bias()? {
            Some(bias) => Ok(Demodulation::for_target(&target, &bias, &self.nv()?, &casr)?),
            None => Ok(Demodulation::direct(target.frequency, &casr)?),
        }
    }

    pub fn peak_search(&self) -> PeakSearch {
        PeakSearch {
            min_snr: self.analysis.min_snr,
            min_relative: self.analysis.min_relative,
            guard: self.analysis.guard_bins,
        }
    }

    pub fn duration(&self) -> Result<f64> {
        let d = self.acquisition.duration_s;
        let block = self.casr.block_duration_s;
        if !(d > 0.0) || d < block {
            return Err(CliError::schema(
                "acquisition.duration_s",
                format!("must be at least one block ({block:e} s), got {d}"),
            ));
        }
        Ok(d)
    }

    pub fn phase_sweep_spec(&self) -> Result<PhaseSweepSpec> {
        let p = self.phase_sweep.unwrap_or_default();
        Ok(PhaseSweepSpec {
            signal: self.first_target()?,
            bias: self.required_bias()?,
            nv: self.nv()?,
            casr: self.casr()?,
            steps: p.steps,
            dwell: p.dwell_s,
            noise: self.noise.model(),
            seed: self.acquisition.seed,
            window: self.analysis.window,
        })
    }

    pub fn sweep_rule(&self) -> Result<(SweepSection, BiasRule, f64)> {
        let s = self.sweep.ok_or_else(|| CliError::schema("sweep", "a [sweep] section is required"))?;
        let eta = match (s.eta_effective, self.noise) {
            (Some(e), _) => e,
            (None, NoiseSection::Magnetic { eta }) => eta,
            _ => {
                return Err(CliError::schema(
                    "sweep.eta_effective",
                    "required unless the noise is magnetic",
                ))
            }
        };
        let rule = BiasRule {
            offset_hz: s.bias_offset_hz,
            amplitude: TAU * s.bias_amplitude_hz,
        };
        Ok((s, rule, eta))
    }

    /// Oracle inputs: first target, bias, integration settings and bounds.
    pub fn oracle_run(&self) -> Result<(FieldTone, FieldTone, NvTwoLevel, IntegrationConfig, AgreementBounds)> {
        let o = self.oracle.unwrap_or_default();
        let signal = self.first_target()?;
        let bias = self.required_bias()?;
        let nv = self.nv()?;
        let base = IntegrationConfig::for_tones(&[signal, bias], &nv, o.duration_s);
        let step = base.step * DEFAULT_STEPS_PER_PERIOD / o.steps_per_period;
        let cfg = base.with_step(step).with_frame(o.frame).with_record_every(o.record_every);
        let bounds = AgreementBounds {
            amplitude: o.amplitude_bound,
            frequency: o.frequency_bound,
            phase: o.phase_bound_deg.to_radians(),
        };
        Ok((signal, bias, nv, cfg, bounds))
    }
}
