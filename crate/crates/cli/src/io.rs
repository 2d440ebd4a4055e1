//! Trace, spectrum, sensitivity and phase-sweep files in CSV and JSON.
//!
//! CSV numbers are written with 17 significant digits, JSON numbers in
//! shortest round-trip form, so both read back bit-exact.

use std::io::Write;
use std::path::Path;

use qfm_casr::casr::TimeTrace;
use qfm_casr::scenarios::{PhaseSweepResult, TraceAnalysis};
use qfm_casr::sensitivity::SweepRow;
use qfm_casr::spectrum::{PeakEstimate, Spectrum, Window};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Format};
use crate::error::{CliError, Result};

pub const TOOL: &str = concat!("qfm-casr ", env!("CARGO_PKG_VERSION"));

/// Relative spread of time steps tolerated when reading a CSV trace.
const UNIFORM_TOLERANCE: f64 = 1e-9;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    pub start_s: f64,
    pub period_s: f64,
    pub time_s: Vec<f64>,
    pub contrast: Vec<f64>,
}

impl TraceFile {
    pub fn from_trace(trace: &TimeTrace, config: Option<ExperimentConfig>) -> Self {
        Self {
            tool: TOOL.to_string(),
            config,
            start_s: trace.start,
            period_s: trace.period,
            time_s: trace.times(),
            contrast: trace.samples.clone(),
        }
    }

    pub fn sampling_rate(&self) -> f64 {
        1.0 / self.period_s
    }
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let fail = |e: csv::Error| CliError::io(path, std::io::Error::other(e));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_trace(path: &Path, format: Format, file: &TraceFile) -> Result<()> {
    match format {
        Format::Json => write_json(path, file),
        Format::Csv => write_csv(
            path,
            &["time_s", "contrast"],
            file.time_s.iter().zip(&file.contrast).map(|(t, c)| vec![num(*t), num(*c)]),
        ),
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Parse CSV rows of floats below a header with `columns` fields.
fn read_csv_columns(path: &Path, columns: usize) -> Result<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = r.headers().map_err(|e| CliError::malformed(path, 1, e.to_string()))?;
    if header.len() != columns {
        return Err(CliError::malformed(path, 1, format!("expected {columns} columns in the header")));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::malformed(path, line, e.to_string()))?;
        if rec.len() != columns {
            return Err(CliError::malformed(path, line, format!("expected {columns} fields, got {}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CliError::malformed(path, line, e.to_string()))?;
        if row.iter().any(|x| !x.is_finite()) {
            return Err(CliError::malformed(path, line, "non-finite value"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let file = if is_json(path) {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let f: TraceFile = serde_json::from_str(&text).map_err(|e| CliError::malformed(path, e.line(), e.to_string()))?;
        if f.time_s.len() != f.contrast.len() {
            return Err(CliError::malformed(path, 0, "time_s and contrast lengths differ"));
        }
        f
    } else {
        let rows = read_csv_columns(path, 2)?;
        if rows.len() < 2 {
            return Err(CliError::malformed(path, rows.len() + 2, "a trace needs at least two samples"));
        }
        let time_s: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let contrast: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let n = time_s.len();
        let period = (time_s[n - 1] - time_s[0]) / (n - 1) as f64;
        if !(period > 0.0) {
            return Err(CliError::malformed(path, 3, "time must increase"));
        }
        for (i, w) in time_s.windows(2).enumerate() {
            if ((w[1] - w[0]) / period - 1.0).abs() > UNIFORM_TOLERANCE.max(1e-12 * n as f64) {
                return Err(CliError::malformed(path, i + 3, "samples are not uniformly spaced"));
            }
        }
        TraceFile {
            tool: TOOL.to_string(),
            config: None,
            start_s: time_s[0],
            period_s: period,
            time_s,
            contrast,
        }
    };
    if file.contrast.len() < 2 {
        return Err(CliError::malformed(path, 0, "a trace needs at least two samples"));
    }
    if !(file.period_s > 0.0) {
        return Err(CliError::malformed(path, 0, "period_s must be > 0"));
    }
    Ok(file)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumFile {
    pub tool: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    pub resolution_hz: f64,
    pub sampling_rate_hz: f64,
    pub samples: usize,
    pub start_s: f64,
    pub window: Window,
    pub clip_dc: bool,
    pub freq_hz: Vec<f64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
    pub magnitude: Vec<f64>,
    pub peaks: Vec<PeakEstimate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor_contrast: Option<f64>,
}

impl SpectrumFile {
    pub fn from_analysis(a: &TraceAnalysis, config: Option<ExperimentConfig>) -> Self {
        let s: &Spectrum = &a.spectrum;
        Self {
            tool: TOOL.to_string(),
            config,
            resolution_hz: s.resolution,
            sampling_rate_hz: s.sampling_rate,
            samples: s.samples,
            start_s: s.start,
            window: s.window,
            clip_dc: s.clip_dc,
            freq_hz: s.frequencies(),
            re: s.bins.iter().map(|z| z.re).collect(),
            im: s.bins.iter().map(|z| z.im).collect(),
            magnitude: s.magnitudes(),
            peaks: a.peaks.clone(),
            floor_contrast: a.floor.map(|f| f.contrast),
        }
    }
}

pub fn write_spectrum(path: &Path, format: Format, file: &SpectrumFile) -> Result<()> {
    match format {
        Format::Json => write_json(path, file),
        Format::Csv => write_csv(
            path,
            &["freq_hz", "re", "im", "magnitude"],
            (0..file.freq_hz.len()).map(|k| vec![num(file.freq_hz[k]), num(file.re[k]), num(file.im[k]), num(file.magnitude[k])]),
        ),
    }
}

pub fn read_spectrum(path: &Path) -> Result<SpectrumFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::malformed(path, e.line(), e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityFile {
    pub tool: String,
    pub config: ExperimentConfig,
    pub eta_effective: f64,
    pub rows: Vec<SweepRow>,
}

pub fn write_sensitivity(path: &Path, format: Format, file: &SensitivityFile) -> Result<()> {
    match format {
        Format::Json => write_json(path, file),
        Format::Csv => write_csv(
            path,
            &["frequency_hz", "eta_target_T_per_sqrtHz", "branch", "valid_flag"],
            file.rows.iter().map(|r| {
                vec![
                    num(r.frequency_hz),
                    r.eta_target.map(num).unwrap_or_default(),
                    r.branch.label().to_string(),
                    u8::from(r.valid).to_string(),
                ]
            }),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepFile {
    pub tool: String,
    pub config: ExperimentConfig,
    pub result: PhaseSweepResult,
    /// (bin centre in degrees, count).
    pub histogram: Vec<(f64, usize)>,
}

/// Sibling path for the histogram table: `name_histogram.ext`.
pub fn histogram_path(path: &Path) -> std::path::PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_histogram{ext}"))
}

pub fn write_phase_sweep(path: &Path, format: Format, file: &PhaseSweepFile) -> Result<()> {
    match format {
        Format::Json => write_json(path, file),
        Format::Csv => {
            write_csv(
                path,
                &["applied_deg", "recovered_deg", "delta_deg", "re", "im", "magnitude"],
                file.result.rows.iter().map(|r| {
                    vec![
                        num(r.applied.to_degrees()),
                        num(r.recovered.to_degrees()),
                        num(r.error.to_degrees()),
                        num(r.re),
                        num(r.im),
                        num(r.magnitude),
                    ]
                }),
            )?;
            write_csv(
                &histogram_path(path),
                &["delta_deg", "count"],
                file.histogram.iter().map(|(c, n)| vec![num(*c), n.to_string()]),
            )
        }
    }
}
