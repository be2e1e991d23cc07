//! End-to-end runs of the `mflqr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mflqr::io::read_baseline;
use mflqr::models;

/// Stable two-state plant, noiseless and short, so every command runs fast.
const SMALL: &str = r#"
[plant]
kind = "matrices"
a = [[0.0, 1.0], [-2.0, -0.5]]
b = [[0.0], [1.0]]

[excitation]
kind = "chirp"
amplitude = 1.0
f0 = 0.05
f1 = 1.0

[sampling]
rate_hz = 20.0
duration_s = 10.0

[noise]
sigma = 0.0
seed = 3

[weights]
m = [1.0, 1.0]
r = [1.0]

[reference]
duration_s = 5.0
dt = 0.01
doublets = [{ state = 0, amplitude_deg = 5.0, period = 2.0, duration = 4.0 }]

[verify]
signals = 4
horizon = 2.0
"#;

fn mflqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mflqr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn same_seed_gives_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        for cmd in ["generate", "synthesize", "baseline", "compare"] {
            let o = mflqr(&["--config", s(&cfg), "--out", s(out), cmd]);
            assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        }
    }
    for file in ["data.csv", "result.txt", "baseline.txt", "comparison.txt", "closed_loop_mf.csv", "closed_loop_lqr.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file} differs");
    }
    let text = fs::read_to_string(a.join("data.csv")).unwrap();
    assert!(text.contains("config_hash"));
}

#[test]
fn truncated_dataset_is_degenerate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    assert_eq!(code(&mflqr(&["--config", s(&cfg), "--out", s(&out), "generate"])), 0);
    let text = fs::read_to_string(out.join("data.csv")).unwrap();
    let mut lines: Vec<&str> = Vec::new();
    let mut rows = 0;
    for line in text.lines() {
        let is_data = line.starts_with(|c: char| c.is_ascii_digit() || c == '-');
        if is_data {
            if rows == 3 {
                continue;
            }
            rows += 1;
        }
        lines.push(line);
    }
    let short = write_config(dir.path(), "short.csv", &(lines.join("\n") + "\n"));
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "synthesize", "--data", s(&short)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn hash_mismatch_is_refused_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    assert_eq!(code(&mflqr(&["--config", s(&cfg), "--out", s(&out), "generate"])), 0);
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "--seed", "4", "synthesize"]);
    assert_eq!(code(&o), 6, "{}", String::from_utf8_lossy(&o.stderr));
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "--seed", "4", "--force", "synthesize"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn configuration_errors_exit_with_parse_code() {
    let dir = tempfile::tempdir().unwrap();
    let broken = write_config(dir.path(), "broken.toml", &SMALL.replace("rate_hz = 20.0", "rate_hz = \"fast\""));
    let o = mflqr(&["--config", s(&broken), "generate"]);
    assert_eq!(code(&o), 2);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("rate_hz") && stderr.contains("line"), "{stderr}");
    let o = mflqr(&["--config", s(&dir.path().join("missing.toml")), "generate"]);
    assert_ne!(code(&o), 0);
}

#[test]
fn baseline_reproduces_published_747_gain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), "b747.toml", mflqr_cli::config::BUILTIN[0].1);
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "baseline"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let (baseline, _) = read_baseline(&out.join("baseline.txt")).unwrap();
    for (k, p) in baseline.k.matrix().iter().zip(models::B747_LQR_GAIN) {
        let unit = 10f64.powf(p.abs().log10().floor() - 3.0);
        assert!((k - p).abs() <= 0.5 * unit, "{k} vs {p}");
    }
}

#[test]
fn undetectable_weights_are_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("a = [[0.0, 1.0], [-2.0, -0.5]]", "a = [[0.0, 1.0], [0.0, 0.0]]")
        .replace("m = [1.0, 1.0]", "m = [0.0, 1.0]");
    let cfg = write_config(dir.path(), "chain.toml", &text);
    let o = mflqr(&["--config", s(&cfg), "--out", s(&dir.path().join("out")), "baseline"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn verify_lemmas_passes_and_catches_a_corrupted_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "small.toml", SMALL);
    let out = dir.path().join("out");
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "verify-lemmas"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "verify-lemmas", "--corrupt-p", "0.1"]);
    assert_eq!(code(&o), 5);
    assert!(fs::read_to_string(out.join("lemmas.txt")).unwrap().contains("FAIL"));
}

#[test]
fn zero_length_window_has_zero_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "t0.toml", &SMALL.replace("horizon = 2.0", "horizon = 0.0"));
    let out = dir.path().join("out");
    let o = mflqr(&["--config", s(&cfg), "--out", s(&out), "verify-lemmas"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("lemmas.txt")).unwrap();
    for name in ["lemma2_relative_residual", "advantage_negative_part", "semi_group_relative_residual"] {
        let line = report.lines().find(|l| l.starts_with(name)).unwrap();
        let value: f64 = line.split_whitespace().nth(2).unwrap().parse().unwrap();
        assert_eq!(value, 0.0, "{line}");
    }
}
