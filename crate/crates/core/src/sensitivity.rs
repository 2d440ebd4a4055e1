//! Slope calibration against a known B_{π/2}, η = σ/s, and the frequency
//! dependence of target sensitivity through the mixing attenuation.

use std::f64::consts::{FRAC_PI_2, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::casr::{alias_frequency, simulate_trace, CasrConfig, NoiseModel};
use crate::error::{invalid, Error, Result};
use crate::qfm::{self, EffectiveSignal, FieldTone, NvBranch, NvTwoLevel, ValidityReport, DEFAULT_VALIDITY_THRESHOLD};
use crate::units::{angular_to_hz, hz_to_angular, GAMMA};

/// Near-resonance band, Hz, inside which sweep points are flagged rather
/// than computed.
pub const EXCLUDED_MARGIN_HZ: f64 = 20e6;

/// Default bias offset below the target, Hz.
pub const DEFAULT_BIAS_OFFSET_HZ: f64 = 1e6;

/// Field amplitude that accumulates Φ_max = π/2 for a tone at `omega_e`:
/// π·ω_e/(4Nγ) with the angular prefactor.
pub fn b_half_pi(cfg: &CasrConfig, omega_e: f64) -> f64 {
    FRAC_PI_2 / (cfg.phase_gain(omega_e) * GAMMA)
}

fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // SplitMix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the slope calibration is run. The AWG-to-field gain is what the
/// calibration has to find; the sweep only ever sees AWG amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationPlan {
    /// Test tone angular frequency, on a harmonic of f_SR.
    pub omega_e: f64,
    /// Hidden field per AWG unit, T.
    pub awg_gain: f64,
    /// Upper end of the AWG amplitude sweep.
    pub sweep_max: f64,
    pub amplitude_points: usize,
    pub phase_points: usize,
    /// Readout samples averaged per sweep point.
    pub averages: usize,
    /// Slope fitted on points with Φ_max up to this, radians.
    pub slope_window: f64,
    pub noise: NoiseModel,
}

impl CalibrationPlan {
    /// 1 MHz test tone, 1 µT per AWG unit, sweep to 1.25 units.
    pub fn new(noise: NoiseModel) -> Self {
        Self {
            omega_e: hz_to_angular(1e6),
            awg_gain: 1e-6,
            sweep_max: 1.25,
            amplitude_points: 251,
            phase_points: 72,
            averages: 100,
            slope_window: 0.15,
            noise,
        }
    }

    fn validate(&self, cfg: &CasrConfig) -> Result<()> {
        cfg.validate()?;
        self.noise.validate()?;
        if let Some(rel) = cfg.tau_mismatch(self.omega_e) {
            return Err(invalid(
                "omega_e",
                format!("test tone off the sequence resonance by {:.2}%", 100.0 * rel),
            ));
        }
        let alias = alias_frequency(angular_to_hz(self.omega_e), cfg.sampling_rate())?;
        if alias.frequency > 1e-6 * cfg.sampling_rate() {
            return Err(invalid("omega_e", "test tone must sit on a harmonic of the sampling rate"));
        }
        if !(self.awg_gain > 0.0 && self.sweep_max > 0.0) {
            return Err(invalid("sweep_max", "gain and sweep range must be > 0"));
        }
        if self.amplitude_points < 5 || self.phase_points < 4 || self.averages == 0 {
            return Err(invalid("amplitude_points", "sweep too coarse"));
        }
        if !(self.slope_window > 0.0 && self.slope_window <= 0.3) {
            return Err(invalid("slope_window", "must be in (0, 0.3] rad"));
        }
        Ok(())
    }

    /// Mean readout of one sweep point.
    fn readout(&self, cfg: &CasrConfig, awg: f64, phase: f64, seed: u64) -> Result<f64> {
        let field = awg * self.awg_gain;
        let tone = EffectiveSignal::direct(GAMMA * field, self.omega_e, phase);
        let duration = self.averages as f64 * cfg.block_duration;
        let trace = simulate_trace(&[tone], cfg, duration, &self.noise, seed)?;
        Ok(trace.samples.iter().sum::<f64>() / trace.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetometryCurve {
    /// Tone phase giving the largest response.
    pub node_phase: f64,
    /// Swept AWG amplitudes.
    pub amplitudes: Vec<f64>,
    /// The same axis in tesla after calibration.
    pub fields: Vec<f64>,
    /// Mean readout contrast per point.
    pub contrast: Vec<f64>,
    /// First turning point in AWG units.
    pub a_half_pi: f64,
    pub b_half_pi: f64,
    /// B_{π/2}/A_{π/2}, T per AWG unit.
    pub calibration_factor: f64,
    /// dS/dB at zero field, contrast per tesla.
    pub slope: f64,
    pub intercept: f64,
    pub slope_points: usize,
}

/// Vertex offset of the parabola through three equally spaced points.
fn parabola_vertex(y0: f64, y1: f64, y2: f64) -> f64 {
    let den = y0 - 2.0 * y1 + y2;
    if den == 0.0 {
        0.0
    } else {
        (0.5 * (y0 - y2) / den).clamp(-1.0, 1.0)
    }
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Phase sweep for the node-aligned phase, amplitude sweep to the first
/// turning point, then a straight-line fit near zero field.
pub fn calibrate_slope(cfg: &CasrConfig, plan: &CalibrationPlan, seed: u64) -> Result<MagnetometryCurve> {
    plan.validate(cfg)?;

    // response is largest with the tone's crest on the block start
    let probe = 0.25 * plan.sweep_max;
    let phases: Vec<f64> = (0..plan.phase_points)
        .map(|j| TAU * j as f64 / plan.phase_points as f64)
        .collect();
    let response: Vec<f64> = phases
        .par_iter()
        .enumerate()
        .map(|(j, &p)| plan.readout(cfg, probe, p, mix_seed(seed, 1, j as u64)))
        .collect::<Result<_>>()?;
    let n = phases.len();
    let best = (0..n).max_by(|&a, &b| response[a].total_cmp(&response[b])).unwrap_or(0);
    let shift = parabola_vertex(response[(best + n - 1) % n], response[best], response[(best + 1) % n]);
    let node_phase = crate::units::normalize_phase(phases[best] + shift * TAU / n as f64);

    let step = plan.sweep_max / (plan.amplitude_points - 1) as f64;
    let amplitudes: Vec<f64> = (0..plan.amplitude_points).map(|j| j as f64 * step).collect();
    let contrast: Vec<f64> = amplitudes
        .par_iter()
        .enumerate()
        .map(|(j, &a)| plan.readout(cfg, a, node_phase, mix_seed(seed, 2, j as u64)))
        .collect::<Result<_>>()?;

    let top = (0..contrast.len())
        .max_by(|&a, &b| contrast[a].total_cmp(&contrast[b]))
        .unwrap_or(0);
    if top == 0 || top + 1 == contrast.len() {
        let last = *contrast.last().unwrap_or(&0.5);
        let reached = ((2.0 * last - 1.0) / cfg.contrast_scale).clamp(-1.0, 1.0).asin();
        return Err(Error::TurningPointNotFound(reached));
    }
    let a_half_pi = amplitudes[top] + step * parabola_vertex(contrast[top - 1], contrast[top], contrast[top + 1]);
    let b_half_pi = b_half_pi(cfg, plan.omega_e);
    let calibration_factor = b_half_pi / a_half_pi;
    let fields: Vec<f64> = amplitudes.iter().map(|a| a * calibration_factor).collect();

    let limit = plan.slope_window / FRAC_PI_2 * b_half_pi;
    let (x, y): (Vec<f64>, Vec<f64>) = fields
        .iter()
        .zip(&contrast)
        .filter(|(b, _)| **b <= limit * (1.0 + 1e-12))
        .map(|(b, s)| (*b, *s))
        .unzip();
    if x.len() < 3 {
        return Err(invalid("amplitude_points", "fewer than 3 points inside the slope window"));
    }
    let (slope, intercept) = linear_fit(&x, &y);
    Ok(MagnetometryCurve {
        node_phase,
        amplitudes,
        fields,
        contrast,
        a_half_pi,
        b_half_pi,
        calibration_factor,
        slope,
        intercept,
        slope_points: x.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    /// Standard deviation of the 1 s averaged readout, contrast units.
    pub sigma: f64,
    /// Slope used, contrast per tesla.
    pub slope: f64,
    /// σ/s, T/√Hz.
    pub eta: f64,
}

impl SensitivityPoint {
    fn new(sigma: f64, slope: f64) -> Self {
        Self {
            sigma,
            slope,
            eta: sigma / slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    /// Mean η over repeats, T/√Hz.
    pub eta: f64,
    /// Sample standard deviation of η over repeats.
    pub eta_std: f64,
    pub points: Vec<SensitivityPoint>,
    /// |Ω_s/Ω_e| applied on top of the effective sensitivity (1 for η_e).
    pub attenuation: f64,
    pub validity: Option<ValidityReport>,
}

impl SensitivityReport {
    fn from_points(points: Vec<SensitivityPoint>) -> Self {
        let n = points.len() as f64;
        let eta = points.iter().map(|p| p.eta).sum::<f64>() / n;
        let eta_std = if points.len() > 1 {
            (points.iter().map(|p| (p.eta - eta).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            eta,
            eta_std,
            points,
            attenuation: 1.0,
            validity: None,
        }
    }

    pub fn repeats(&self) -> usize {
        self.points.len()
    }

    pub fn relative_std(&self) -> f64 {
        if self.eta > 0.0 {
            self.eta_std / self.eta
        } else {
            0.0
        }
    }
}

/// Standard deviation of the 1 s average of a signal-free readout, from one
/// record of whole blocks lasting about 1 s.
fn one_second_sigma(cfg: &CasrConfig, noise: &NoiseModel, seed: u64) -> Result<f64> {
    let blocks = cfg.sampling_rate().round().max(2.0);
    let duration = blocks * cfg.block_duration;
    let trace = simulate_trace(&[], cfg, duration, noise, seed)?;
    let c = trace.centered();
    let var = c.iter().map(|x| x * x).sum::<f64>() / (blocks - 1.0);
    Ok((var / blocks * duration).sqrt())
}

/// η_e = σ_{1 s}/s with a fixed calibration curve, repeated `repeats` times.
pub fn measure_sensitivity(
    cfg: &CasrConfig,
    noise: &NoiseModel,
    curve: &MagnetometryCurve,
    repeats: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if repeats == 0 {
        return Err(invalid("repeats", "must be >= 1"));
    }
    if !(curve.slope > 0.0) {
        return Err(invalid("curve", "slope must be > 0"));
    }
    let points = (0..repeats)
        .into_par_iter()
        .map(|i| Ok(SensitivityPoint::new(one_second_sigma(cfg, noise, mix_seed(seed, 3, i as u64))?, curve.slope)))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport::from_points(points))
}

/// Each repeat runs its own calibration and its own 1 s noise record, as a
/// repeated measurement on the bench would.
pub fn repeated_sensitivity(
    cfg: &CasrConfig,
    plan: &CalibrationPlan,
    repeats: usize,
    seed: u64,
) -> Result<SensitivityReport> {
    if repeats == 0 {
        return Err(invalid("repeats", "must be >= 1"));
    }
    let points = (0..repeats)
        .into_par_iter()
        .map(|i| {
            let curve = calibrate_slope(cfg, plan, mix_seed(seed, 4, i as u64))?;
            let sigma = one_second_sigma(cfg, &plan.noise, mix_seed(seed, 5, i as u64))?;
            Ok(SensitivityPoint::new(sigma, curve.slope))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityReport::from_points(points))
}

/// η_s = η_e·|Ω_s/Ω_e| for the given mixing configuration.
pub fn target_sensitivity(
    report: &SensitivityReport,
    signal: &FieldTone,
    bias: &FieldTone,
    nv: &NvTwoLevel,
) -> Result<SensitivityReport> {
    let a = qfm::attenuation(signal, bias, nv)?;
    Ok(SensitivityReport {
        eta: report.eta * a,
        eta_std: report.eta_std * a,
        points: report
            .points
            .iter()
            .map(|p| SensitivityPoint {
                sigma: p.sigma,
                slope: p.slope / a,
                eta: p.eta * a,
            })
            .collect(),
        attenuation: report.attenuation * a,
        validity: Some(qfm::validity_check(signal, bias, nv, DEFAULT_VALIDITY_THRESHOLD)),
    })
}

/// Where the bias sits relative to each target on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRule {
    /// ω_b = ω_s − 2π·offset.
    pub offset_hz: f64,
    /// Ω_b, rad/s.
    pub amplitude: f64,
}

impl Default for BiasRule {
    fn default() -> Self {
        Self {
            offset_hz: DEFAULT_BIAS_OFFSET_HZ,
            amplitude: hz_to_angular(4.3e6),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub frequency_hz: f64,
    /// η_s in T/√Hz; `None` inside the excluded band.
    pub eta_target: Option<f64>,
    pub branch: NvBranch,
    pub valid: bool,
}

fn sweep_point(f_s: f64, rule: &BiasRule, nv: &NvTwoLevel, eta_e: f64) -> SweepRow {
    let f_b = f_s - rule.offset_hz;
    let f0 = angular_to_hz(nv.resonance);
    let invalid_row = SweepRow {
        frequency_hz: f_s,
        eta_target: None,
        branch: nv.branch,
        valid: false,
    };
    if (f_s - f0).abs() <= EXCLUDED_MARGIN_HZ || (f_b - f0).abs() <= EXCLUDED_MARGIN_HZ || f_b <= 0.0 {
        return invalid_row;
    }
    let computed = FieldTone::from_hz(1.0, f_s, 0.0)
        .and_then(|s| Ok((s, FieldTone::new(rule.amplitude, hz_to_angular(f_b), 0.0)?)))
        .and_then(|(s, b)| qfm::attenuation(&s, &b, nv));
    match computed {
        Ok(a) => SweepRow {
            eta_target: Some(eta_e * a),
            valid: true,
            ..invalid_row
        },
        Err(_) => invalid_row,
    }
}

/// η_s over a grid of target frequencies (Hz) on one branch.
pub fn sweep_frequency(grid_hz: &[f64], rule: &BiasRule, nv: &NvTwoLevel, eta_e: f64) -> Result<Vec<SweepRow>> {
    if let Some(bad) = grid_hz.iter().find(|f| !(**f > 0.0 && **f <= 10e9)) {
        return Err(invalid("grid", format!("frequencies must lie in (0, 10 GHz], got {bad}")));
    }
    Ok(grid_hz.par_iter().map(|&f| sweep_point(f, rule, nv, eta_e)).collect())
}

/// Both NV branches at their default resonances, −1 first.
pub fn sweep_branches(grid_hz: &[f64], rule: &BiasRule, eta_e: f64) -> Result<Vec<SweepRow>> {
    let mut rows = sweep_frequency(grid_hz, rule, &NvTwoLevel::from_branch(NvBranch::MinusOne), eta_e)?;
    rows.extend(sweep_frequency(grid_hz, rule, &NvTwoLevel::from_branch(NvBranch::PlusOne), eta_e)?);
    Ok(rows)
}

/// `points` log-spaced frequencies from `lo` to `hi`, Hz.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| (a + (b - a) * k as f64 / (points - 1) as f64).exp())
        .collect()
}
