//! Summary rows and CSV serialization.
//!
//! CSV conventions: comma separator, `.` decimal point, header row, LF line
//! endings, floats at 17 significant digits so re-runs round-trip bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// One metric with its pass criterion spelled out.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub metric: String,
    pub value: f64,
    pub std_error: Option<f64>,
    /// Bound or reference value the metric is compared against.
    pub reference: Option<f64>,
    /// The stated tolerance backing the pass flag.
    pub tolerance: String,
    /// `None` for report-only rows.
    pub pass: Option<bool>,
}

impl SummaryRow {
    pub fn report(metric: impl Into<String>, value: f64) -> Self {
        Self {
            metric: metric.into(),
            value,
            std_error: None,
            reference: None,
            tolerance: String::new(),
            pass: None,
        }
    }

    pub fn with_se(mut self, se: Option<f64>) -> Self {
        self.std_error = se;
        self
    }

    pub fn checked(
        metric: impl Into<String>,
        value: f64,
        reference: f64,
        tolerance: impl Into<String>,
        pass: bool,
    ) -> Self {
        Self {
            metric: metric.into(),
            value,
            std_error: None,
            reference: Some(reference),
            tolerance: tolerance.into(),
            pass: Some(pass),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub experiment: &'static str,
    pub rows: Vec<SummaryRow>,
    pub csv_paths: Vec<PathBuf>,
}

impl ExperimentResult {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass != Some(false))
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("metric,value,std_error,reference,tolerance,pass\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.metric,
                fmt_float(r.value),
                r.std_error.map(fmt_float).unwrap_or_default(),
                r.reference.map(fmt_float).unwrap_or_default(),
                r.tolerance.replace(',', ";"),
                match r.pass {
                    Some(true) => "pass",
                    Some(false) => "fail",
                    None => "",
                }
            );
        }
        out
    }

    pub fn text_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "experiment: {}", self.experiment);
        let _ = writeln!(
            out,
            "{:<28} {:>14} {:>12} {:>14} {:<30} {:>5}",
            "metric", "value", "std error", "reference", "tolerance", "pass"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<28} {:>14.6e} {:>12} {:>14} {:<30} {:>5}",
                r.metric,
                r.value,
                r.std_error.map(|s| format!("{s:.3e}")).unwrap_or_else(|| "-".into()),
                r.reference.map(|s| format!("{s:.6e}")).unwrap_or_else(|| "-".into()),
                r.tolerance,
                match r.pass {
                    Some(true) => "pass",
                    Some(false) => "FAIL",
                    None => "-",
                }
            );
        }
        out
    }
}

/// 17 significant digits: round-trips any f64 bit-exactly.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Write a CSV with LF endings; `rows` yields already-formatted cells.
pub fn write_csv(
    dir: &Path,
    name: &str,
    header: &str,
    rows: impl Iterator<Item = String>,
) -> CliResult<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut content = String::with_capacity(4096);
    content.push_str(header);
    content.push('\n');
    for row in rows {
        content.push_str(&row);
        content.push('\n');
    }
    let path = dir.join(name);
    fs::write(&path, content)?;
    Ok(path)
}
