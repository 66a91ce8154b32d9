//! Experiment reports and their on-disk form.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use super::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// The run hit a numerical instability before completing.
    Instability,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail => 1,
            Status::Instability => 3,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct DataTable {
    pub name: String,
    pub header: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<f64>>,
    /// Lines appended after the data as `# ...` comments.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub footer: Vec<String>,
}

impl DataTable {
    pub fn new(name: &str, header: &[&str]) -> Self {
        DataTable {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            footer: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> io::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
        }
        let mut out = w.into_inner().map_err(|e| io::Error::other(e.to_string()))?;
        for line in &self.footer {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
        Ok(out)
    }
}

/// Everything one experiment run produced.
#[derive(Clone, Debug, Serialize)]
pub struct ReportBundle {
    pub experiment: String,
    pub status: Status,
    pub checks: Vec<Check>,
    pub metrics: Map<String, Value>,
    pub tables: Vec<DataTable>,
    pub error: Option<String>,
    pub config: ExperimentConfig,
    /// Extra raw files, written verbatim.
    #[serde(skip)]
    pub files: Vec<(String, Vec<u8>)>,
}

impl ReportBundle {
    pub fn new(config: &ExperimentConfig) -> Self {
        ReportBundle {
            experiment: config.experiment.name().into(),
            status: Status::Pass,
            checks: Vec::new(),
            metrics: Map::new(),
            tables: Vec::new(),
            error: None,
            config: config.clone(),
            files: Vec::new(),
        }
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), passed, detail: detail.into() });
    }

    pub fn metric(&mut self, name: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metrics.insert(name.into(), v);
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    /// Sets the status from the checks unless an error already decided it.
    pub fn finish(&mut self) {
        if self.status == Status::Pass && self.checks.iter().any(|c| !c.passed) {
            self.status = Status::Fail;
        }
    }

    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let status = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Instability => "INSTABILITY",
        };
        let _ = writeln!(s, "experiment: {}", self.experiment);
        let _ = writeln!(s, "status: {status}");
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error: {e}");
        }
        for c in &self.checks {
            let _ = writeln!(s, "[{}] {}: {}", if c.passed { "pass" } else { "FAIL" }, c.name, c.detail);
        }
        for (k, v) in &self.metrics {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Writes `summary.json`, `summary.txt` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let json = serde_json::to_vec_pretty(self).map_err(io::Error::other)?;
        written.push(write_atomic(&dir.join("summary.json"), &json)?);
        written.push(write_atomic(&dir.join("summary.txt"), self.summary_text().as_bytes())?);
        for t in &self.tables {
            written.push(write_atomic(&dir.join(format!("{}.csv", t.name)), &t.to_csv()?)?);
        }
        for (name, bytes) in &self.files {
            written.push(write_atomic(&dir.join(name), bytes)?);
        }
        Ok(written)
    }
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<PathBuf> {
    let name = path.file_name().ok_or_else(|| io::Error::other("path has no file name"))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(path.to_path_buf())
}
