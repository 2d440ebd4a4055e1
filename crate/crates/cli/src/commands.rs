use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use qfm_casr::casr::{alias_frequency, max_phase, simulate_trace, PhasePrefactor, TimeTrace};
use qfm_casr::oracle::{validate_effective, OracleComparison};
use qfm_casr::qfm::{validity_check, DEFAULT_VALIDITY_THRESHOLD};
use qfm_casr::scenarios::{analyze_trace, error_histogram, run_phase_sweep, PhaseSweepResult, TraceAnalysis};
use qfm_casr::sensitivity::{log_grid, sweep_branches};
use qfm_casr::spectrum::Window;
use qfm_casr::units::angular_to_hz;

use crate::config::{ExperimentConfig, Format};
use crate::error::{exit, CliError, Result};
use crate::io::{self, PhaseSweepFile, SensitivityFile, SpectrumFile, TraceFile, TOOL};

#[derive(Debug, Parser)]
#[command(name = "qfm-casr", version, about = "Frequency-mixing NV magnetometry: simulate, analyze, validate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a readout trace from a config.
    Simulate(Common),
    /// Spectrum and calibrated peak table of a trace file.
    Spectrum {
        /// Trace file (CSV or JSON).
        trace: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Target sensitivity over a frequency grid on both NV branches.
    SensitivitySweep(Common),
    /// Step the target phase through a full turn and read it back.
    PhaseSweep(Common),
    /// Integrate the spin dynamics and compare with the closed forms.
    OracleValidate(Common),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WindowArg {
    None,
    Hann,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (TOML) or a JSON output to re-run from.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Remove the DC bin before analysis.
    #[arg(long)]
    pub clip_dc: bool,
    #[arg(long, value_enum)]
    pub window: Option<WindowArg>,
    /// Use Φ_max = 4πNΩ_e/ω_e instead of 2NΩ_e/ω_e.
    #[arg(long, alias = "literal-eq4-prefactor")]
    pub literal_prefactor: bool,
}

impl Common {
    /// Load the config and fold the command-line overrides into it, so the
    /// provenance written with an output re-runs it exactly.
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Usage("--config is required".into()))?;
        let mut cfg = ExperimentConfig::load(path)?;
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.acquisition.seed = seed;
        }
        if self.clip_dc {
            cfg.analysis.clip_dc = true;
        }
        if let Some(w) = self.window {
            cfg.analysis.window = match w {
                WindowArg::None => Window::None,
                WindowArg::Hann => Window::Hann,
            };
        }
        if self.literal_prefactor {
            cfg.casr.prefactor = PhasePrefactor::Literal;
        }
        if let Some(f) = self.format {
            cfg.output.format = match f {
                FormatArg::Csv => Format::Csv,
                FormatArg::Json => Format::Json,
            };
        }
        if let Some(out) = &self.out {
            cfg.output.path = Some(out.display().to_string());
        }
    }
}

/// Where and how to write; the path is dropped from the config so that
/// provenance blocks do not depend on it.
fn take_output(cfg: &mut ExperimentConfig, explicit_format: bool) -> Option<(PathBuf, Format)> {
    let path = cfg.output.path.take().map(PathBuf::from)?;
    let format = if explicit_format {
        cfg.output.format
    } else {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            Some(e) if e.eq_ignore_ascii_case("csv") => Format::Csv,
            _ => cfg.output.format,
        }
    };
    cfg.output.format = format;
    Some((path, format))
}

fn required_output(cfg: &mut ExperimentConfig, explicit_format: bool) -> Result<(PathBuf, Format)> {
    take_output(cfg, explicit_format).ok_or_else(|| CliError::Usage("no output path: pass --out or set output.path".into()))
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<TimeTrace> {
    let signals = cfg.effective_signals()?;
    Ok(simulate_trace(
        &signals,
        &cfg.casr()?,
        cfg.duration()?,
        &cfg.noise.model(),
        cfg.acquisition.seed,
    )?)
}

fn simulate_summary(cfg: &ExperimentConfig, trace: &TimeTrace) -> Result<String> {
    let casr = cfg.casr()?;
    let mut s = String::new();
    let _ = writeln!(s, "samples        {}", trace.len());
    let _ = writeln!(s, "sampling rate  {} Hz", trace.sampling_rate());
    let _ = writeln!(s, "duration       {} s", trace.duration());
    let nv = cfg.nv()?;
    let bias = cfg.bias()?;
    for (i, (e, t)) in trace.signals.iter().zip(cfg.targets()?).enumerate() {
        let f_e = angular_to_hz(e.frequency);
        let alias = alias_frequency(f_e, casr.sampling_rate())?;
        let _ = writeln!(
            s,
            "tone {i}: f_e {f_e:.3} Hz, Φ_max {:.6} rad, alias {:.6} Hz (n = {}, {:?})",
            max_phase(e, &casr),
            alias.frequency,
            alias.harmonic,
            alias.branch
        );
        if let Some(b) = &bias {
            let v = validity_check(&t, b, &nv, DEFAULT_VALIDITY_THRESHOLD);
            let _ = writeln!(
                s,
                "        validity {} (max ratio {:.4}, min detuning {:.3} MHz)",
                if v.pass { "pass" } else { "FAIL" },
                v.max_ratio(),
                angular_to_hz(v.min_detuning) / 1e6
            );
        }
        if let Some(rel) = casr.tau_mismatch(e.frequency) {
            let _ = writeln!(s, "        warning: τ off resonance with ω_e by {:.2}%", 100.0 * rel);
        }
    }
    Ok(s)
}

pub fn cmd_simulate(common: &Common) -> Result<i32> {
    let mut cfg = common.resolve()?;
    let (path, format) = required_output(&mut cfg, common.format.is_some())?;
    let trace = simulate(&cfg)?;
    io::write_trace(&path, format, &TraceFile::from_trace(&trace, Some(cfg.clone())))?;
    print!("{}", simulate_summary(&cfg, &trace)?);
    println!("wrote {}", path.display());
    Ok(exit::OK)
}

/// Spectrum and peaks of a trace file under the demodulation prior of `cfg`.
pub fn analyze(file: &TraceFile, cfg: &ExperimentConfig) -> Result<TraceAnalysis> {
    let demod = cfg.demodulation()?;
    let mut casr = cfg.casr()?;
    let fs = file.sampling_rate();
    if ((casr.sampling_rate() - fs) / fs).abs() > 1e-9 {
        // trust the file's own timing for the spectrum axis
        casr.block_duration = file.period_s;
    }
    let trace = TimeTrace {
        start: file.start_s,
        period: file.period_s,
        samples: file.contrast.clone(),
        config: casr,
        signals: Vec::new(),
        noise: cfg.noise.model(),
        seed: cfg.acquisition.seed,
    };
    Ok(analyze_trace(&trace, &demod, &cfg.peak_search(), cfg.analysis.clip_dc, cfg.analysis.window)?)
}

pub fn peak_table(a: &TraceAnalysis) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>14} {:>18} {:>14} {:>14} {:>10} {:>10}",
        "f_a [Hz]", "f_s [Hz]", "B_e [pT]", "B_s [nT]", "φ_s [deg]", "SNR"
    );
    for p in &a.peaks {
        let target = p.target_frequency.map(|f| format!("{f:.3}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:>14.4} {:>18} {:>14.3} {:>14.4} {:>10.3} {:>10.1}",
            p.peak.frequency,
            target,
            p.amplitude.effective_tesla * 1e12,
            p.amplitude.target_tesla * 1e9,
            p.phase.target.to_degrees(),
            p.peak.snr
        );
    }
    if let Some(f) = &a.floor {
        let _ = writeln!(
            s,
            "floor: {:.4e} contrast, {:.2} pT effective, {:.3} nT target ({} bins)",
            f.contrast,
            f.effective_tesla.unwrap_or(0.0) * 1e12,
            f.target_tesla.unwrap_or(0.0) * 1e9,
            f.bins
        );
    }
    s
}

pub fn cmd_spectrum(trace_path: &Path, common: &Common) -> Result<i32> {
    let file = io::read_trace(trace_path)?;
    let mut cfg = match (&common.config, &file.config) {
        (Some(p), _) => ExperimentConfig::load(p)?,
        (None, Some(c)) => c.clone(),
        (None, None) => {
            return Err(CliError::Usage(
                "the trace carries no config; pass --config for the demodulation prior".into(),
            ))
        }
    };
    common.apply(&mut cfg);
    let output = take_output(&mut cfg, common.format.is_some());
    let analysis = analyze(&file, &cfg)?;
    if let Some((path, format)) = output {
        io::write_spectrum(&path, format, &SpectrumFile::from_analysis(&analysis, Some(cfg.clone())))?;
        println!("wrote {}", path.display());
    }
    print!("{}", peak_table(&analysis));
    Ok(exit::OK)
}

pub fn sensitivity_table(cfg: &ExperimentConfig) -> Result<SensitivityFile> {
    let (s, rule, eta) = cfg.sweep_rule()?;
    let rows = sweep_branches(&log_grid(s.start_hz, s.stop_hz, s.points), &rule, eta)?;
    Ok(SensitivityFile {
        tool: TOOL.to_string(),
        config: cfg.clone(),
        eta_effective: eta,
        rows,
    })
}

pub fn cmd_sensitivity_sweep(common: &Common) -> Result<i32> {
    let mut cfg = common.resolve()?;
    let (path, format) = required_output(&mut cfg, common.format.is_some())?;
    let file = sensitivity_table(&cfg)?;
    io::write_sensitivity(&path, format, &file)?;
    let valid = file.rows.iter().filter(|r| r.valid).count();
    println!("{} rows ({valid} valid), η_e = {:.1} pT/√Hz", file.rows.len(), file.eta_effective * 1e12);
    for branch in [qfm_casr::qfm::NvBranch::MinusOne, qfm_casr::qfm::NvBranch::PlusOne] {
        if let Some(r) = file.rows.iter().find(|r| r.branch == branch && r.valid) {
            println!(
                "{:>9}: η_s = {:.2} nT/√Hz at {:.3} MHz",
                branch.label(),
                r.eta_target.unwrap_or(0.0) * 1e9,
                r.frequency_hz / 1e6
            );
        }
    }
    println!("wrote {}", path.display());
    Ok(exit::OK)
}

pub fn phase_sweep(cfg: &ExperimentConfig) -> Result<(PhaseSweepResult, Vec<(f64, usize)>)> {
    let spec = cfg.phase_sweep_spec()?;
    let result = run_phase_sweep(&spec)?;
    let bin = cfg.phase_sweep.unwrap_or_default().histogram_bin_deg.to_radians();
    let histogram = error_histogram(&result.rows, bin)
        .into_iter()
        .map(|(c, n)| (c.to_degrees(), n))
        .collect();
    Ok((result, histogram))
}

pub fn cmd_phase_sweep(common: &Common) -> Result<i32> {
    let mut cfg = common.resolve()?;
    let (path, format) = required_output(&mut cfg, common.format.is_some())?;
    let (result, histogram) = phase_sweep(&cfg)?;
    println!("points            {}", result.rows.len());
    println!("σ_φ               {:.4}°", result.sigma_phase.to_degrees());
    println!("mean Δφ           {:.4}°", result.mean_error.to_degrees());
    println!("R² re / im        {:.6} / {:.6}", result.real_fit.r_squared, result.imag_fit.r_squared);
    println!("quadrature        {:.3}°", result.quadrature.to_degrees());
    println!("|peak| rel. std   {:.4}", result.magnitude_relative_std);
    if result.low_snr_points > 0 {
        println!("warning: {} points below the phase SNR threshold", result.low_snr_points);
    }
    let file = PhaseSweepFile {
        tool: TOOL.to_string(),
        config: cfg,
        result,
        histogram,
    };
    io::write_phase_sweep(&path, format, &file)?;
    println!("wrote {}", path.display());
    if format == Format::Csv {
        println!("wrote {}", io::histogram_path(&path).display());
    }
    Ok(exit::OK)
}

pub fn oracle(cfg: &ExperimentConfig) -> Result<OracleComparison> {
    let (signal, bias, nv, integration, bounds) = cfg.oracle_run()?;
    Ok(validate_effective(&signal, &bias, &nv, &integration, &bounds)?)
}

pub fn oracle_table(c: &OracleComparison) -> String {
    let mut s = String::new();
    let fit = &c.run.fit;
    let _ = writeln!(s, "{:>10} {:>20} {:>20} {:>12} {:>12}", "quantity", "predicted", "fitted", "error", "bound");
    let _ = writeln!(
        s,
        "{:>10} {:>20.6} {:>20.6} {:>12.3e} {:>12.3e}",
        "f_e [Hz]",
        angular_to_hz(c.predicted.frequency),
        angular_to_hz(fit.frequency),
        c.frequency_error,
        c.bounds.frequency
    );
    let _ = writeln!(
        s,
        "{:>10} {:>20.6} {:>20.6} {:>12.3e} {:>12.3e}",
        "Ω_e [Hz]",
        angular_to_hz(c.predicted_amplitude),
        angular_to_hz(fit.amplitude),
        c.amplitude_error,
        c.bounds.amplitude
    );
    let _ = writeln!(
        s,
        "{:>10} {:>20.6} {:>20.6} {:>12.4} {:>12.4}",
        "φ_e [deg]",
        c.predicted_phase.to_degrees(),
        fit.phase.to_degrees(),
        c.phase_error.to_degrees(),
        c.bounds.phase.to_degrees()
    );
    let _ = writeln!(
        s,
        "{:>10} {:>20.3} {:>20.3} {:>12.3e} {:>12}",
        "δ [Hz]",
        angular_to_hz(c.predicted.stark_shift),
        angular_to_hz(fit.stark_shift),
        c.stark_error,
        "-"
    );
    let _ = writeln!(
        s,
        "norm drift {:.2e}, residual {:.3e} rad, validity {}, breakdown {}",
        c.run.max_norm_drift,
        fit.residual_rms,
        if c.validity.pass { "pass" } else { "FAIL" },
        c.breakdown
    );
    let _ = writeln!(s, "{}", if c.pass() { "PASS" } else { "FAIL" });
    s
}

pub fn cmd_oracle_validate(common: &Common) -> Result<i32> {
    let mut cfg = common.resolve()?;
    let output = take_output(&mut cfg, common.format.is_some());
    let c = oracle(&cfg)?;
    print!("{}", oracle_table(&c));
    if let Some((path, _)) = output {
        #[derive(serde::Serialize)]
        struct Report<'a> {
            tool: &'a str,
            config: &'a ExperimentConfig,
            comparison: &'a OracleComparison,
            pass: bool,
        }
        let report = Report {
            tool: TOOL,
            config: &cfg,
            comparison: &c,
            pass: c.pass(),
        };
        let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::io(&path, e.into()))? + "\n";
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    if c.pass() {
        Ok(exit::OK)
    } else {
        Err(CliError::Acceptance(if c.breakdown {
            "oracle fit breaks down: the closed form does not describe this configuration".into()
        } else {
            "oracle and closed form disagree beyond the bounds".into()
        }))
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Simulate(c) => cmd_simulate(c),
        Command::Spectrum { trace, common } => cmd_spectrum(trace, common),
        Command::SensitivitySweep(c) => cmd_sensitivity_sweep(c),
        Command::PhaseSweep(c) => cmd_phase_sweep(c),
        Command::OracleValidate(c) => cmd_oracle_validate(c),
    }
}
