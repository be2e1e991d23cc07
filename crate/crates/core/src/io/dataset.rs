//! CSV files: `t,u_1..u_m,y_1..y_p` for data sets and `t,u_1..u_m,x_1..x_n`
//! for trajectories, one sample per row. Leading lines starting with `#`
//! carry `key = value` metadata.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{format_f64, write_atomic, Metadata};
use crate::dynamics::{DataSet, Trajectory};
use crate::{Error, Result};

/// Column layout and grid of a parsed CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub columns: Vec<String>,
    pub inputs: usize,
    pub outputs: usize,
    pub samples: usize,
    pub dt: f64,
}

fn header(inputs: usize, outputs: usize, out_prefix: &str) -> Vec<String> {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=inputs).map(|i| format!("u_{i}")));
    cols.extend((1..=outputs).map(|i| format!("{out_prefix}_{i}")));
    cols
}

fn render(
    meta: &Metadata,
    times: &[f64],
    inputs: &DMatrix<f64>,
    outputs: &DMatrix<f64>,
    out_prefix: &str,
) -> Result<Vec<u8>> {
    let mut text = String::new();
    for (k, v) in meta.iter() {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    let mut w = csv::Writer::from_writer(text.into_bytes());
    w.write_record(header(inputs.ncols(), outputs.ncols(), out_prefix))?;
    for (k, &t) in times.iter().enumerate() {
        let mut row = vec![format_f64(t)];
        row.extend(inputs.row(k).iter().map(|&v| format_f64(v)));
        row.extend(outputs.row(k).iter().map(|&v| format_f64(v)));
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn check_finite(m: &DMatrix<f64>, prefix: &str) -> Result<()> {
    for (k, row) in m.row_iter().enumerate() {
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                row: k,
                column: format!("{prefix}_{}", j + 1),
            });
        }
    }
    Ok(())
}

pub fn write_dataset(data: &DataSet, meta: &Metadata, path: &Path) -> Result<()> {
    check_finite(&data.inputs, "u")?;
    check_finite(&data.outputs, "y")?;
    write_atomic(path, &render(meta, &data.times, &data.inputs, &data.outputs, "y")?)
}

pub fn write_trajectory(traj: &Trajectory, meta: &Metadata, path: &Path) -> Result<()> {
    check_finite(&traj.inputs, "u")?;
    check_finite(&traj.states, "x")?;
    write_atomic(path, &render(meta, &traj.times, &traj.inputs, &traj.states, "x")?)
}

struct Parsed {
    meta: Metadata,
    times: Vec<f64>,
    inputs: DMatrix<f64>,
    outputs: DMatrix<f64>,
    columns: Vec<String>,
}

fn split_metadata(text: &str) -> Result<(Metadata, &str)> {
    let mut meta = Metadata::default();
    let mut rest = text;
    let mut line_no = 0;
    while rest.starts_with('#') {
        line_no += 1;
        let end = rest.find('\n').map(|i| i + 1).unwrap_or(rest.len());
        let line = rest[1..end].trim();
        if !line.is_empty() {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::schema(format!("metadata line {line_no}"), "expected `# key = value`")
            })?;
            meta.insert(k.trim(), v.trim());
        }
        rest = &rest[end..];
    }
    Ok((meta, rest))
}

fn parse(path: &Path, out_prefix: &str) -> Result<Parsed> {
    let text = fs::read_to_string(path)?;
    let (meta, body) = split_metadata(&text)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(body.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| Error::schema("header", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if columns.first().map(String::as_str) != Some("t") {
        return Err(Error::schema("header", "first column must be `t`"));
    }
    let inputs = columns.iter().skip(1).take_while(|c| c.starts_with("u_")).count();
    let outputs = columns.len() - 1 - inputs;
    if inputs == 0 {
        return Err(Error::schema("header", "no `u_*` input columns"));
    }
    if outputs == 0 {
        return Err(Error::schema("header", format!("no `{out_prefix}_*` columns")));
    }
    if columns != header(inputs, outputs, out_prefix) {
        let bad = columns
            .iter()
            .zip(header(inputs, outputs, out_prefix))
            .find(|(a, b)| *a != b)
            .map(|(a, b)| format!("column `{a}` where `{b}` was expected"))
            .unwrap_or_default();
        return Err(Error::schema("header", bad));
    }

    let mut times = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::schema(format!("row {k}"), e.to_string()))?;
        if record.len() != columns.len() {
            return Err(Error::schema(
                format!("row {k}"),
                format!("{} fields, header has {}", record.len(), columns.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::schema(format!("row {k}, column `{}`", columns[j]), format!("`{field}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    row: k,
                    column: columns[j].clone(),
                });
            }
            if j == 0 {
                times.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if times.is_empty() {
        return Err(Error::schema("body", "file has a header but no samples"));
    }
    let width = inputs + outputs;
    let all = DMatrix::from_row_slice(times.len(), width, &values);
    Ok(Parsed {
        meta,
        inputs: all.columns(0, inputs).into_owned(),
        outputs: all.columns(inputs, outputs).into_owned(),
        times,
        columns,
    })
}

/// Reads a data-set CSV file. Errors name the offending row (sample index,
/// from 0) or column.
pub fn read_dataset(path: &Path) -> Result<(DataSet, Metadata, CsvSchema)> {
    let p = parse(path, "y")?;
    let data = DataSet::new(p.times, p.inputs, p.outputs)?;
    let schema = CsvSchema {
        columns: p.columns,
        inputs: data.inputs_dim(),
        outputs: data.outputs_dim(),
        samples: data.samples(),
        dt: data.dt,
    };
    Ok((data, p.meta, schema))
}

pub fn read_trajectory(path: &Path) -> Result<(Trajectory, Metadata)> {
    let p = parse(path, "x")?;
    Ok((Trajectory::new(p.times, p.outputs, p.inputs)?, p.meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn write_text(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn header_only_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_text(&dir, "d.csv", "t,u_1,y_1\n");
        assert!(matches!(read_dataset(&path), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn jittered_time_names_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("t,u_1,y_1\n");
        for k in 0..10 {
            let t = if k == 4 { 0.4001 } else { k as f64 * 0.1 };
            text.push_str(&format!("{t},1,2\n"));
        }
        let path = write_text(&dir, "d.csv", &text);
        match read_dataset(&path) {
            Err(Error::NonUniformTime { row, .. }) => assert_eq!(row, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_number_names_column() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_text(&dir, "d.csv", "t,u_1,y_1\n0,1,2\n0.1,x,2\n");
        match read_dataset(&path) {
            Err(Error::SchemaViolation { location, .. }) => assert!(location.contains("u_1"), "{location}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_text(&dir, "d.csv", "t,u_1,y_2\n0,1,2\n0.1,1,2\n");
        assert!(matches!(read_dataset(&path), Err(Error::SchemaViolation { .. })));
    }

    #[test]
    fn nan_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_text(&dir, "d.csv", "t,u_1,y_1\n0,1,2\n0.1,1,NaN\n");
        match read_dataset(&path) {
            Err(Error::NonFiniteValue { row, column }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "y_1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
