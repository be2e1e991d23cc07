//! On-disk contracts: data-set and trajectory CSV files, and sectioned text
//! files for synthesis results and baseline gains.
//!
//! Doubles are written in shortest round-trip form, so reading a written file
//! reproduces every value bit for bit. Writers create a temporary file next
//! to the target and rename it into place.

mod dataset;
mod sections;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::Result;

pub use dataset::{read_dataset, read_trajectory, write_dataset, write_trajectory, CsvSchema};
pub use sections::{
    push_key_values, push_matrix, read_baseline, read_result, write_baseline, write_result, Baseline, Document, Metadata, ResultFile,
};

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:e}")
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!(".{name}.tmp"))
}

/// Writes `contents` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = temp_path(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
