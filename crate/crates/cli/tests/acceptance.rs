//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use qfm_casr::bessel;
use qfm_casr::casr::{alias_candidates, alias_frequency, envelope, simulate_trace, CasrConfig, NoiseModel};
use qfm_casr::qfm::{self, EffectiveSignal, FieldTone, NvBranch, NvTwoLevel};
use qfm_casr::scenarios::floor_monte_carlo;
use qfm_casr::sensitivity::{b_half_pi, target_sensitivity, SensitivityReport, EXCLUDED_MARGIN_HZ};
use qfm_casr::spectrum::{amplitude_from_peak, fft_spectrum, phase_from_peak, spectrum_of, Demodulation, Window};
use qfm_casr::units::{hz_to_angular, wrap_to_pi, GAMMA};
use qfm_casr_cli::commands;
use qfm_casr_cli::config::NoiseSection;
use qfm_casr_cli::io::TraceFile;
use qfm_casr_cli::ExperimentConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ETA0: f64 = 102e-12;

type Check = Result<String, String>;

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn load(name: &str) -> Result<ExperimentConfig, String> {
    ExperimentConfig::load(&preset(name)).map_err(|e| e.to_string())
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn attenuation_at_2p4_ghz() -> Check {
    let cfg = load("two_tone_2p4ghz.cfg")?;
    let target = cfg.targets().map_err(|e| e.to_string())?[0];
    let bias = cfg.bias().map_err(|e| e.to_string())?.ok_or("preset has no bias")?;
    let nv = cfg.nv().map_err(|e| e.to_string())?;
    let started = Instant::now();
    let a = qfm::attenuation(&target, &bias, &nv).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure((a - 52.0).abs() <= 1.0, || format!("|Ω_s/Ω_e| = {a:.3}"))?;
    ensure(elapsed < Duration::from_millis(1), || format!("took {elapsed:?}"))?;
    Ok(format!("|Ω_s/Ω_e| = {a:.3} in {elapsed:?}"))
}

fn oracle_agreement() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = dir.path().join("oracle.json");
    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_qfm-casr"))
        .args(["oracle-validate", "--config"])
        .arg(preset("oracle_2p4ghz.cfg"))
        .arg("--out")
        .arg(&report)
        .output()
        .map_err(|e| e.to_string())?;
    let agree_time = started.elapsed();
    ensure(out.status.code() == Some(0), || {
        format!("agreement run exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stdout))
    })?;
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let c = &v["comparison"];
    let (fe, ae, pe) = (
        c["frequency_error"].as_f64().unwrap_or(f64::NAN),
        c["amplitude_error"].as_f64().unwrap_or(f64::NAN),
        c["phase_error"].as_f64().unwrap_or(f64::NAN).to_degrees(),
    );
    ensure(fe <= 1e-4 && ae <= 0.05 && pe.abs() <= 2.0, || format!("errors ω {fe:.2e}, Ω {ae:.2e}, φ {pe:.3}°"))?;

    let started = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_qfm-casr"))
        .args(["oracle-validate", "--config"])
        .arg(preset("oracle_violated.cfg"))
        .output()
        .map_err(|e| e.to_string())?;
    let violated_time = started.elapsed();
    let text = String::from_utf8_lossy(&out.stdout);
    ensure(out.status.code() == Some(6) && text.contains("breakdown true"), || {
        format!("violated config exited {:?}", out.status.code())
    })?;
    let limit = Duration::from_secs(300);
    ensure(agree_time < limit && violated_time < limit, || "trajectory over 5 min".into())?;
    Ok(format!(
        "ω_e {fe:.1e}, Ω_e {ae:.1e}, φ_e {pe:.1e}°; violated config exits 6 with breakdown ({:.1} s + {:.1} s)",
        agree_time.as_secs_f64(),
        violated_time.as_secs_f64()
    ))
}

fn aliasing() -> Check {
    let a = alias_frequency(1_003_125.0, 12_500.0).map_err(|e| e.to_string())?;
    ensure(a.frequency == 3125.0 && a.harmonic == 80, || format!("{a:?}"))?;
    Ok(format!("f_a = {} Hz, n = {}", a.frequency, a.harmonic))
}

fn sub_hz_resolution() -> Check {
    let cfg = load("two_tone_2p4ghz.cfg")?;
    let started = Instant::now();
    let trace = commands::simulate(&cfg).map_err(|e| e.to_string())?;
    let a = commands::analyze(&TraceFile::from_trace(&trace, None), &cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    let f: Vec<f64> = a.peaks.iter().map(|p| p.peak.frequency).collect();
    ensure(a.peaks.len() == 2, || format!("{} peaks at {f:?}", a.peaks.len()))?;
    let gap = (f[1] - f[0]).abs();
    let snr = a.peaks.iter().map(|p| p.peak.snr).fold(f64::INFINITY, f64::min);
    ensure((gap - 1.0).abs() <= 0.2 && snr > 10.0, || format!("gap {gap:.4} Hz, min SNR {snr:.1}"))?;
    ensure(elapsed < Duration::from_secs(5), || format!("took {elapsed:?}"))?;
    Ok(format!("peaks {:.4} / {:.4} Hz, gap {gap:.4} Hz, min SNR {snr:.0}, {elapsed:.2?}", f[0], f[1]))
}

fn noise_floors() -> Check {
    let cfg = load("two_tone_2p4ghz.cfg")?;
    let started = Instant::now();
    let signals = cfg.effective_signals().map_err(|e| e.to_string())?;
    let casr = cfg.casr().map_err(|e| e.to_string())?;
    let demod = cfg.demodulation().map_err(|e| e.to_string())?;
    let noise = cfg.noise.model();
    let eta = match noise {
        NoiseModel::Magnetic { eta } => eta,
        _ => return Err("preset noise is not magnetic".into()),
    };
    let mut scaled = Vec::new();
    let mut worst_ratio: f64 = 0.0;
    for t in [2.0, 8.0, 32.0] {
        let s = floor_monte_carlo(&signals, &casr, &noise, t, 100, 10_000, &demod, &cfg.peak_search())
            .map_err(|e| e.to_string())?;
        let absolute = s.effective_mean * t.sqrt() / eta;
        ensure((0.25..=4.0).contains(&absolute), || format!("floor {absolute:.3} η₀/√T at {t} s"))?;
        worst_ratio = worst_ratio.max((s.target_mean / s.effective_mean / demod.attenuation - 1.0).abs());
        scaled.push(s.effective_mean * t.sqrt());
    }
    let spread = scaled.iter().map(|s| (s / scaled[0] - 1.0).abs()).fold(0.0, f64::max);
    let elapsed = started.elapsed();
    ensure(spread < 0.1, || format!("floor·√T spread {:.1}%", 100.0 * spread))?;
    ensure(worst_ratio < 0.05, || format!("target/effective off attenuation by {:.2}%", 100.0 * worst_ratio))?;
    ensure(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "floor·√T = {:.1} / {:.1} / {:.1} pT (spread {:.1}%), target/effective = attenuation {:.2}, {elapsed:.1?}",
        scaled[0] * 1e12,
        scaled[1] * 1e12,
        scaled[2] * 1e12,
        100.0 * spread,
        demod.attenuation
    ))
}

fn calibration_anchor() -> Check {
    let b = b_half_pi(&CasrConfig::default(), hz_to_angular(1e6));
    ensure((b / 0.58e-6 - 1.0).abs() <= 0.01, || format!("B_π/2 = {b:.4e} T"))?;
    Ok(format!("B_π/2 = {:.4} µT", b * 1e6))
}

fn sensitivity_plateaus() -> Check {
    let report = SensitivityReport {
        eta: ETA0,
        eta_std: 0.0,
        points: Vec::new(),
        attenuation: 1.0,
        validity: None,
    };
    let plateau = |branch| -> Result<f64, String> {
        let nv = NvTwoLevel::from_branch(branch);
        let s = FieldTone::from_hz(1.0, 10e6, 0.0).map_err(|e| e.to_string())?;
        let b = FieldTone::from_hz(4.3e6, 9e6, 0.0).map_err(|e| e.to_string())?;
        Ok(target_sensitivity(&report, &s, &b, &nv).map_err(|e| e.to_string())?.eta)
    };
    let minus = plateau(NvBranch::MinusOne)?;
    let plus = plateau(NvBranch::PlusOne)?;
    ensure((minus / 55e-9 - 1.0).abs() <= 0.05 && (plus / 80e-9 - 1.0).abs() <= 0.05, || {
        format!("plateaus {:.2} / {:.2} nT/√Hz", minus * 1e9, plus * 1e9)
    })?;

    let cfg = load("sensitivity_sweep.cfg")?;
    let started = Instant::now();
    let table = commands::sensitivity_table(&cfg).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("500-point sweep took {elapsed:?}"))?;
    for branch in [NvBranch::MinusOne, NvBranch::PlusOne] {
        let f0 = branch.default_resonance_hz();
        let rows: Vec<_> = table.rows.iter().filter(|r| r.branch == branch && r.valid).collect();
        let low = rows[0].eta_target.unwrap_or(f64::NAN);
        let near = rows
            .iter()
            .filter(|r| r.frequency_hz < f0 - EXCLUDED_MARGIN_HZ)
            .last()
            .and_then(|r| r.eta_target)
            .unwrap_or(f64::NAN);
        ensure(near < low, || format!("{}: no improvement approaching resonance", branch.label()))?;
        let above: Vec<f64> = rows
            .iter()
            .filter(|r| r.frequency_hz > f0 + EXCLUDED_MARGIN_HZ)
            .filter_map(|r| r.eta_target)
            .collect();
        ensure(above.windows(2).all(|w| w[1] > w[0]), || format!("{}: not increasing above resonance", branch.label()))?;
    }
    Ok(format!(
        "η_s = {:.2} / {:.2} nT/√Hz, sweep improves toward and degrades above each resonance, {elapsed:.1?}",
        minus * 1e9,
        plus * 1e9
    ))
}

fn phase_measurement() -> Check {
    let cfg = load("phase_sweep.cfg")?;
    let started = Instant::now();
    let (r, _) = commands::phase_sweep(&cfg).map_err(|e| e.to_string())?;
    let sigma = r.sigma_phase.to_degrees();
    let r2 = r.real_fit.r_squared.min(r.imag_fit.r_squared);
    let quad = (r.quadrature.abs().to_degrees() - 90.0).abs();
    ensure(r.rows.len() == 360, || format!("{} rows", r.rows.len()))?;
    ensure(r2 > 0.999 && quad < 1.0, || format!("R² {r2:.6}, quadrature off by {quad:.2}°"))?;
    ensure(r.magnitude_relative_std < 0.05, || format!("|peak| relative std {:.4}", r.magnitude_relative_std))?;
    ensure((0.2..=0.8).contains(&sigma), || format!("σ_φ = {sigma:.4}°"))?;

    let mut quiet = cfg.clone();
    quiet.noise = NoiseSection::None;
    let (q, _) = commands::phase_sweep(&quiet).map_err(|e| e.to_string())?;
    ensure(q.sigma_phase < 1e-6, || format!("noiseless σ_φ = {:.2e} rad", q.sigma_phase))?;
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "σ_φ = {sigma:.3}°, R² ≥ {r2:.5}, |peak| rel. std {:.4}, noiseless σ_φ = {:.1e} rad, {elapsed:.1?}",
        r.magnitude_relative_std, q.sigma_phase
    ))
}

fn property_suites() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let casr = CasrConfig::default();

    for _ in 0..2000 {
        let tones: Vec<EffectiveSignal> = (0..rng.random_range(0..4))
            .map(|_| EffectiveSignal::direct(rng.random_range(-1e6..1e6), rng.random_range(1.0..1e8), rng.random_range(0.0..TAU)))
            .collect();
        let v = envelope(rng.random_range(0.0..10.0), &tones, &casr);
        ensure((0.0..=1.0).contains(&v), || format!("envelope {v}"))?;
    }

    for _ in 0..50 {
        let n = rng.random_range(2..500);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = spectrum_of(&xs, 12_500.0, 0.0, false, Window::None).map_err(|e| e.to_string())?;
        let time = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
        ensure((s.mean_square() - time).abs() <= 1e-12 * time, || "Parseval identity".into())?;
    }

    let nv = NvTwoLevel::from_branch(NvBranch::MinusOne);
    for _ in 0..50 {
        let offset = if rng.random_bool(0.5) { 1000.0 } else { 3125.0 };
        let below = rng.random_bool(0.5);
        let (f_s, f_b) = if below { (2.4e9 - 1e6 - offset, 2.4e9) } else { (2.4e9 + offset, 2.399e9) };
        let phi_max = rng.random_range(0.01..0.2);
        let unit = FieldTone::from_hz(1.0, f_s, rng.random_range(0.0..TAU)).map_err(|e| e.to_string())?;
        let bias = FieldTone::from_hz(4.3e6, f_b, rng.random_range(0.0..TAU)).map_err(|e| e.to_string())?;
        let demod = Demodulation::for_target(&unit, &bias, &nv, &casr).map_err(|e| e.to_string())?;
        let amplitude = phi_max / casr.phase_gain(demod.effective_frequency) * demod.attenuation;
        let signal = unit.with_amplitude(amplitude);
        let e = qfm::down_convert(&signal, &bias, &nv).map_err(|e| e.to_string())?;
        let trace = simulate_trace(&[e], &casr, 1.0, &NoiseModel::None, 0).map_err(|e| e.to_string())?;
        let spec = fft_spectrum(&trace, true, Window::None).map_err(|e| e.to_string())?;
        let amp = amplitude_from_peak(&spec, demod.alias.frequency, &demod).map_err(|e| e.to_string())?;
        ensure((amp.target_tesla * GAMMA / amplitude - 1.0).abs() < 0.01, || "amplitude round trip".into())?;
        let ph = phase_from_peak(&spec, demod.alias.frequency, &demod).map_err(|e| e.to_string())?;
        ensure(wrap_to_pi(ph.target - signal.phase).abs() < 1e-6, || "phase round trip".into())?;
    }

    let omega_e = TAU * (1e6 + 1000.0);
    for k in 1..=20 {
        let phi = 0.1 * k as f64;
        let e = EffectiveSignal::direct(phi / casr.phase_gain(omega_e), omega_e, 0.0);
        let trace = simulate_trace(&[e], &casr, 1.0, &NoiseModel::None, 0).map_err(|e| e.to_string())?;
        let spec = fft_spectrum(&trace, true, Window::None).map_err(|e| e.to_string())?;
        let k0 = spec.bin_of(1000.0).ok_or("no 1 kHz bin")?;
        let seen = spec.bins[k0].norm();
        ensure((seen / (casr.contrast_scale * bessel::j1(phi)) - 1.0).abs() < 0.01, || format!("J₁ law at Φ = {phi}"))?;
    }

    let e = [EffectiveSignal::direct(2e4, TAU * 1_003_125.0, 0.0)];
    let noise = NoiseModel::Magnetic { eta: ETA0 };
    let a = simulate_trace(&e, &casr, 0.5, &noise, 11).map_err(|e| e.to_string())?;
    let b = simulate_trace(&e, &casr, 0.5, &noise, 11).map_err(|e| e.to_string())?;
    let c = simulate_trace(&e, &casr, 0.5, &noise, 12).map_err(|e| e.to_string())?;
    ensure(a == b && a != c, || "seeded determinism".into())?;

    for _ in 0..10_000 {
        let f_e = rng.random_range(1e-3..1e7);
        let al = alias_frequency(f_e, 12_500.0).map_err(|e| e.to_string())?;
        let c = alias_candidates(al.frequency, al.harmonic, 12_500.0);
        ensure(c.iter().any(|x| (x - f_e).abs() <= 1e-9 * f_e.max(1.0)), || format!("alias round trip at {f_e}"))?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "envelope range, Parseval, amplitude/phase round trips, J₁ law, determinism, alias enumeration, {elapsed:.1?}"
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("attenuation at 2.4 GHz", attenuation_at_2p4_ghz),
        ("oracle agreement and breakdown", oracle_agreement),
        ("alias of 1,003,125 Hz", aliasing),
        ("two tones 1 Hz apart resolved", sub_hz_resolution),
        ("noise floors over 100 seeds", noise_floors),
        ("B_π/2 calibration anchor", calibration_anchor),
        ("sensitivity plateaus and sweep shape", sensitivity_plateaus),
        ("phase sweep", phase_measurement),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
