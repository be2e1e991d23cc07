//! Sectioned text files for synthesis results and baseline gains.
//!
//! ```text
//! [meta]
//! key = value
//! [K]
//! 9.34e0 -7.47e0 -3.30e0 -2.91e0
//! ```
//!
//! Matrix sections hold one whitespace-separated row per line. Key/value
//! sections hold `key = value` lines. Blank lines and lines starting with `#`
//! are ignored. Unknown sections are kept and reported as warnings.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{format_f64, write_atomic};
use crate::lqr::{GainMatrix, ValueMatrix};
use crate::synthesis::{Diagnostics, SynthesisResult};
use crate::{Error, Result};

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Metadata(BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.0.insert(key.into(), value.into());
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.insert(key, value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.0.iter()
    }
}

/// A parsed sectioned file: section name to raw lines, in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<(String, Vec<String>)>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: Vec<(String, Vec<String>)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::schema(format!("line {}", i + 1), "unterminated section header"))?
                    .trim();
                if sections.iter().any(|(n, _)| n == name) {
                    return Err(Error::schema(format!("line {}", i + 1), format!("duplicate section [{name}]")));
                }
                sections.push((name.to_string(), Vec::new()));
                continue;
            }
            match sections.last_mut() {
                Some((_, lines)) => lines.push(line.to_string()),
                None => {
                    return Err(Error::schema(
                        format!("line {}", i + 1),
                        "content before the first section header",
                    ))
                }
            }
        }
        Ok(Self { sections })
    }

    pub fn section(&self, name: &str) -> Option<&[String]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, l)| l.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[String]> {
        self.section(name)
            .ok_or_else(|| Error::schema(format!("[{name}]"), "required section is missing"))
    }

    pub fn matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let lines = self.require(name)?;
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(lines.len());
        for (i, line) in lines.iter().enumerate() {
            let row = line
                .split_whitespace()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::schema(format!("[{name}] row {i}"), format!("`{f}` is not a number"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::schema(
                        format!("[{name}] row {i}"),
                        format!("{} values, previous rows have {}", row.len(), first.len()),
                    ));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::schema(format!("[{name}]"), "matrix section is empty"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat))
    }

    pub fn key_values(&self, name: &str) -> Result<Metadata> {
        let mut meta = Metadata::new();
        for (i, line) in self.require(name)?.iter().enumerate() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::schema(format!("[{name}] line {i}"), "expected `key = value`"))?;
            meta.insert(k.trim(), v.trim());
        }
        Ok(meta)
    }
}

/// Appends a matrix section, one row per line.
pub fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("[{name}]\n"));
    for row in m.row_iter() {
        let line: Vec<String> = row.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out.push('\n');
}

/// Appends a `key = value` section.
pub fn push_key_values(out: &mut String, name: &str, meta: &Metadata) {
    out.push_str(&format!("[{name}]\n"));
    for (k, v) in meta.iter() {
        out.push_str(&format!("{k} = {v}\n"));
    }
    out.push('\n');
}

fn field<T: std::str::FromStr>(meta: &Metadata, section: &str, key: &str) -> Result<T> {
    let raw = meta
        .get(key)
        .ok_or_else(|| Error::schema(format!("[{section}] {key}"), "missing key"))?;
    raw.parse()
        .map_err(|_| Error::schema(format!("[{section}] {key}"), format!("cannot parse `{raw}`")))
}

fn warn_unknown(doc: &Document, known: &[&str]) -> Vec<String> {
    doc.sections
        .iter()
        .filter(|(n, _)| !known.contains(&n.as_str()))
        .map(|(n, _)| {
            let msg = format!("ignoring unknown section [{n}]");
            log::warn!("{msg}");
            msg
        })
        .collect()
}

/// A synthesis result with the file's metadata and any warnings raised while reading.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultFile {
    pub result: SynthesisResult,
    pub meta: Metadata,
    pub warnings: Vec<String>,
}

const RESULT_SECTIONS: [&str; 7] = ["meta", "L", "P", "S", "K", "X", "diagnostics"];

pub fn write_result(result: &SynthesisResult, meta: &Metadata, path: &Path) -> Result<()> {
    let d = &result.diagnostics;
    let mut out = String::from("# model-free LQR synthesis result\n");
    push_key_values(&mut out, "meta", meta);
    push_matrix(&mut out, "L", &result.l);
    push_matrix(&mut out, "P", result.p.matrix());
    push_matrix(&mut out, "S", &result.s);
    push_matrix(&mut out, "K", result.k.matrix());
    push_matrix(&mut out, "X", &result.states);
    let diag = Metadata::new()
        .with("objective", format_f64(d.objective))
        .with("max_violation", format_f64(d.max_violation))
        .with("max_violation_raw", format_f64(d.max_violation_raw))
        .with("kkt_residual", format_f64(d.kkt_residual))
        .with("outer_iterations", d.outer_iterations)
        .with("inner_iterations", d.inner_iterations)
        .with("penalty", format_f64(d.penalty))
        .with("converged", d.converged)
        .with("initialization", &d.initialization)
        .with("data_scale", format_f64(d.data_scale));
    push_key_values(&mut out, "diagnostics", &diag);
    write_atomic(path, out.as_bytes())
}

pub fn read_result(path: &Path) -> Result<ResultFile> {
    let doc = Document::parse(&fs::read_to_string(path)?)?;
    let k = doc.matrix("K")?;
    let l = doc.matrix("L")?;
    let p = doc.matrix("P")?;
    let s = doc.matrix("S")?;
    let states = doc.matrix("X")?;
    let n = l.nrows();
    if l.shape() != (n, n) || p.shape() != (n, n) || s.nrows() != n || k.shape() != (s.ncols(), n) {
        return Err(Error::schema(
            "[K]",
            format!(
                "inconsistent shapes: L {:?}, P {:?}, S {:?}, K {:?}",
                l.shape(),
                p.shape(),
                s.shape(),
                k.shape()
            ),
        ));
    }
    let dm = doc.key_values("diagnostics")?;
    let diagnostics = Diagnostics {
        objective: field(&dm, "diagnostics", "objective")?,
        max_violation: field(&dm, "diagnostics", "max_violation")?,
        max_violation_raw: field(&dm, "diagnostics", "max_violation_raw")?,
        kkt_residual: field(&dm, "diagnostics", "kkt_residual")?,
        outer_iterations: field(&dm, "diagnostics", "outer_iterations")?,
        inner_iterations: field(&dm, "diagnostics", "inner_iterations")?,
        penalty: field(&dm, "diagnostics", "penalty")?,
        converged: field(&dm, "diagnostics", "converged")?,
        initialization: field(&dm, "diagnostics", "initialization")?,
        data_scale: field(&dm, "diagnostics", "data_scale")?,
    };
    let meta = match doc.section("meta") {
        Some(_) => doc.key_values("meta")?,
        None => Metadata::new(),
    };
    let warnings = warn_unknown(&doc, &RESULT_SECTIONS);
    let p = ValueMatrix::new(p).map_err(|e| Error::schema("[P]", e.to_string()))?;
    Ok(ResultFile {
        result: SynthesisResult {
            l,
            p,
            s,
            k: GainMatrix::new(k),
            states,
            diagnostics,
        },
        meta,
        warnings,
    })
}

/// ARE gain and value matrix for a known plant.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub k: GainMatrix,
    pub p: ValueMatrix,
    pub meta: Metadata,
}

const BASELINE_SECTIONS: [&str; 3] = ["meta", "P", "K"];

pub fn write_baseline(baseline: &Baseline, path: &Path) -> Result<()> {
    let mut out = String::from("# ARE baseline gain\n");
    push_key_values(&mut out, "meta", &baseline.meta);
    push_matrix(&mut out, "P", baseline.p.matrix());
    push_matrix(&mut out, "K", baseline.k.matrix());
    write_atomic(path, out.as_bytes())
}

pub fn read_baseline(path: &Path) -> Result<(Baseline, Vec<String>)> {
    let doc = Document::parse(&fs::read_to_string(path)?)?;
    let k = doc.matrix("K")?;
    let p = ValueMatrix::new(doc.matrix("P")?).map_err(|e| Error::schema("[P]", e.to_string()))?;
    if k.ncols() != p.dim() {
        return Err(Error::schema("[K]", format!("K has {} columns, P is {}×{}", k.ncols(), p.dim(), p.dim())));
    }
    let meta = match doc.section("meta") {
        Some(_) => doc.key_values("meta")?,
        None => Metadata::new(),
    };
    let warnings = warn_unknown(&doc, &BASELINE_SECTIONS);
    Ok((
        Baseline {
            k: GainMatrix::new(k),
            p,
            meta,
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_result() -> SynthesisResult {
        let l = DMatrix::from_row_slice(2, 2, &[1.5, 0.0, -0.25, 0.75]);
        let s = DMatrix::from_row_slice(2, 1, &[0.1, 1.0 / 3.0]);
        let w = crate::lqr::CostWeights::diagonal(&[1.0, 1.0], &[2.0]).unwrap();
        let states = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, 0.3, 0.4, 0.5, 1e-300]);
        let d = Diagnostics {
            objective: 1.25e-7,
            max_violation: 3e-9,
            max_violation_raw: 3e-7,
            kkt_residual: 1e-7,
            outer_iterations: 12,
            inner_iterations: 80,
            penalty: 1e4,
            converged: true,
            initialization: "policy-iteration".into(),
            data_scale: 0.01,
        };
        SynthesisResult::from_factors(l, s, states, &w, d).unwrap()
    }

    #[test]
    fn result_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        let r = sample_result();
        let meta = Metadata::new().with("config_hash", "abc");
        write_result(&r, &meta, &path).unwrap();
        let back = read_result(&path).unwrap();
        assert_eq!(back.result, r);
        assert_eq!(back.meta, meta);
        assert!(back.warnings.is_empty());
    }

    #[test]
    fn missing_gain_section() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        write_result(&sample_result(), &Metadata::new(), &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let start = text.find("[K]").unwrap();
        let end = text.find("[X]").unwrap();
        let cut = format!("{}{}", &text[..start], &text[end..]);
        fs::write(&path, cut).unwrap();
        match read_result(&path) {
            Err(Error::SchemaViolation { location, .. }) => assert_eq!(location, "[K]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_section_warns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.txt");
        write_result(&sample_result(), &Metadata::new(), &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("[future]\nanswer = 42\n");
        fs::write(&path, text).unwrap();
        let back = read_result(&path).unwrap();
        assert_eq!(back.result.k, sample_result().k);
        assert_eq!(back.warnings.len(), 1);
    }
}
