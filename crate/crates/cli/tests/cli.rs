use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qfm_casr_cli::io::{read_spectrum, read_trace};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qfm-casr"))
}

fn preset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_byte_identical_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a.csv"), dir.path().join("b.csv"), dir.path().join("c.csv"));
    let cfg = preset("two_tone_2p4ghz.cfg");
    for (out, seed) in [(&a, "1"), (&b, "1"), (&c, "2")] {
        let o = run(&["simulate", "--config", s(&cfg), "--seed", seed, "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b, c) = (std::fs::read(a).unwrap(), std::fs::read(b).unwrap(), std::fs::read(c).unwrap());
    assert_eq!(a, b);
    assert_ne!(a, c);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 100_001);
    assert!(text.starts_with("time_s,contrast\n"));
}

#[test]
fn provenance_reruns_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first.json");
    let second = dir.path().join("second.json");
    let o = run(&["simulate", "--config", s(&preset("tone_4ghz.cfg")), "--seed", "9", "--out", s(&first)]);
    assert!(o.status.success());
    let o = run(&["simulate", "--config", s(&first), "--out", s(&second)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&first).unwrap(), std::fs::read(&second).unwrap());
    let trace = read_trace(&first).unwrap();
    assert_eq!(trace.config.unwrap().acquisition.seed, 9);
}

#[test]
fn spectrum_reports_both_tones() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.csv");
    let spec = dir.path().join("spec.json");
    let cfg = preset("two_tone_2p4ghz.cfg");
    assert!(run(&["simulate", "--config", s(&cfg), "--out", s(&trace)]).status.success());
    let o = run(&["spectrum", s(&trace), "--config", s(&cfg), "--out", s(&spec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = stdout(&o);
    assert!(table.contains("3124.99") || table.contains("3125.00"), "{table}");
    assert!(table.contains("3126.00") || table.contains("3125.99"), "{table}");

    let file = read_spectrum(&spec).unwrap();
    assert_eq!(file.peaks.len(), 2);
    let injected = 0.21e6 / qfm_casr::units::GYROMAGNETIC_HZ_PER_T;
    for p in &file.peaks {
        assert!((p.amplitude.target_tesla / injected - 1.0).abs() < 0.05);
    }
    // JSON spectra read back bit-exact
    let again = dir.path().join("again.json");
    qfm_casr_cli::io::write_spectrum(&again, qfm_casr_cli::config::Format::Json, &file).unwrap();
    assert_eq!(read_spectrum(&again).unwrap(), file);
}

#[test]
fn spectrum_csv_has_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.json");
    let spec = dir.path().join("spec.csv");
    assert!(run(&["simulate", "--config", s(&preset("tone_0p6ghz.cfg")), "--out", s(&trace)]).status.success());
    let o = run(&["spectrum", s(&trace), "--window", "hann", "--out", s(&spec)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&spec).unwrap();
    assert!(text.starts_with("freq_hz,re,im,magnitude\n"));
    assert_eq!(text.lines().count(), 50_002);
    assert!(stdout(&o).contains("2000.0"), "{}", stdout(&o));
}

#[test]
fn malformed_and_missing_inputs_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "time_s,contrast\n").unwrap();
    let cfg = preset("two_tone_2p4ghz.cfg");
    let o = run(&["spectrum", s(&empty), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(5));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "time_s,contrast\n0,0.5\n8e-5,0.5\n1.6e-4,x\n").unwrap();
    let o = run(&["spectrum", s(&bad), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let o = run(&["spectrum", s(&dir.path().join("absent.csv")), "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(4));

    let zero = dir.path().join("zero.cfg");
    std::fs::write(&zero, std::fs::read_to_string(&cfg).unwrap().replace("duration_s = 8.0", "duration_s = 0.0")).unwrap();
    let o = run(&["simulate", "--config", s(&zero), "--out", s(&dir.path().join("z.csv"))]);
    assert_eq!(o.status.code(), Some(3));

    let typo = dir.path().join("typo.cfg");
    std::fs::write(&typo, std::fs::read_to_string(&cfg).unwrap().replace("seed = 1", "seeed = 1")).unwrap();
    let o = run(&["simulate", "--config", s(&typo), "--out", s(&dir.path().join("z.csv"))]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeed"));

    assert_eq!(run(&["simulate"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn literal_prefactor_scales_the_phase() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = preset("tone_4ghz.cfg");
    let phi = |extra: &[&str]| {
        let out = dir.path().join("t.csv");
        let mut args = vec!["simulate", "--config", s(&cfg), "--out", s(&out)];
        args.extend_from_slice(extra);
        let text = stdout(&run(&args));
        let at = text.find("Φ_max ").unwrap() + "Φ_max ".len();
        text[at..].split_whitespace().next().unwrap().parse::<f64>().unwrap()
    };
    let angular = phi(&[]);
    let literal = phi(&["--literal-eq4-prefactor"]);
    assert!((literal / angular - std::f64::consts::TAU).abs() < 1e-4);
    assert_eq!(phi(&["--literal-prefactor"]), literal);
}

#[test]
fn sensitivity_sweep_covers_both_branches() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    let o = run(&["sensitivity-sweep", "--config", s(&preset("sensitivity_sweep.cfg")), "--out", s(&out)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "frequency_hz,eta_target_T_per_sqrtHz,branch,valid_flag");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1000);
    assert_eq!(rows.iter().filter(|r| r[2] == "minus_one").count(), 500);
    assert!(rows.iter().any(|r| r[3] == "0" && r[1].is_empty()));
    let json = dir.path().join("s.json");
    assert!(run(&["sensitivity-sweep", "--config", s(&preset("sensitivity_sweep.cfg")), "--out", s(&json)]).status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 1000);
    assert!(v["config"]["sweep"].is_object());
}

#[test]
fn noiseless_phase_sweep_reads_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("quiet.cfg");
    let text = std::fs::read_to_string(preset("phase_sweep.cfg"))
        .unwrap()
        .replace("kind = \"magnetic\"\neta = 102e-12", "kind = \"none\"")
        .replace("steps = 360", "steps = 36");
    std::fs::write(&cfg, text).unwrap();
    let out = dir.path().join("p.csv");
    let o = run(&["phase-sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(&out).unwrap();
    assert_eq!(table.lines().count(), 37);
    for line in table.lines().skip(1) {
        let delta: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(delta.to_radians().abs() < 1e-6, "{line}");
    }
    assert!(dir.path().join("p_histogram.csv").exists());
}

#[test]
fn oracle_flags_breakdown_and_accepts_zero_signal() {
    let o = run(&["oracle-validate", "--config", s(&preset("oracle_violated.cfg"))]);
    assert_eq!(o.status.code(), Some(6));
    assert!(stdout(&o).contains("breakdown true"));

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.cfg");
    let text = std::fs::read_to_string(preset("oracle_2p4ghz.cfg"))
        .unwrap()
        .replace("amplitude_hz = 0.21e6", "amplitude_hz = 0.0")
        .replace("duration_s = 20e-6", "duration_s = 10e-6");
    std::fs::write(&cfg, text).unwrap();
    let report = dir.path().join("oracle.json");
    let o = run(&["oracle-validate", "--config", s(&cfg), "--out", s(&report)]);
    assert!(o.status.success(), "{}", stdout(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["comparison"]["predicted_amplitude"], 0.0);
}
