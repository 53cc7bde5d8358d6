//! Output writers: CSV with 17-significant-digit floats (lossless f64
//! round-trip), plot-data triplets, and the run manifest.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Lossless float formatting for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:.16e}")
    }
}

pub struct CsvWriter {
    path: PathBuf,
    buf: String,
    columns: usize,
}

impl CsvWriter {
    pub fn new(dir: &Path, name: &str, header: &[&str]) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "{}", header.join(","));
        Self {
            path: dir.join(name),
            buf,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        assert_eq!(cells.len(), self.columns, "row width mismatch");
        let _ = writeln!(self.buf, "{}", cells.join(","));
    }

    pub fn finish(self) -> Result<PathBuf> {
        std::fs::write(&self.path, self.buf.as_bytes())
            .with_context(|| format!("cannot write {}", self.path.display()))?;
        Ok(self.path)
    }
}

/// `(x, y, yerr)` triplets for log-log ratio plots; header only when empty.
pub fn write_plotdata(dir: &Path, name: &str, rows: &[(f64, f64, f64)]) -> Result<PathBuf> {
    let mut w = CsvWriter::new(dir, name, &["x", "y", "yerr"]);
    for &(x, y, e) in rows {
        w.row(&[fmt_f64(x), fmt_f64(y), fmt_f64(e)]);
    }
    w.finish()
}

/// One hard-assertion verdict.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Verdict {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            pass,
            detail,
        }
    }
}

#[derive(Serialize)]
pub struct RunManifest<'a> {
    pub experiment: &'a str,
    pub build: &'a str,
    pub wall_time_secs: f64,
    pub config: &'a crate::config::Config,
    pub outputs: Vec<String>,
    pub verdicts: &'a [Verdict],
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest<'_>) -> Result<PathBuf> {
    // every listed output must exist and be non-empty
    for out in &manifest.outputs {
        let meta = std::fs::metadata(out)
            .with_context(|| format!("manifest lists missing output {out}"))?;
        anyhow::ensure!(meta.len() > 0, "manifest lists empty output {out}");
    }
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest)?;
    std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}
