//! Deterministic result files: JSON summary, per-report CSV tables,
//! gnuplot series and a MANIFEST of checksums written last.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mheat_core::verify::{BoundReport, Verdict};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};
use crate::runner::RunReport;

/// Seventeen significant digits, enough to round-trip any f64.
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{x:.16e}")
    }
}

/// Writes files into `dir`, remembering each for the manifest.
struct Writer {
    dir: PathBuf,
    written: Vec<(String, usize, String)>,
}

impl Writer {
    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        let digest = Sha256::digest(bytes);
        let hex = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        self.written.push((name.to_string(), bytes.len(), hex));
        Ok(())
    }
}

/// File-system safe form of a report id or parameter name.
fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

/// Parameter names of a report in order of first appearance.
fn param_names(r: &BoundReport) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for s in &r.samples {
        for p in &s.params {
            if !names.contains(&p.name) {
                names.push(p.name.clone());
            }
        }
    }
    names
}

pub fn report_csv(r: &BoundReport) -> Result<Vec<u8>> {
    let names = param_names(r);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
    header.extend(["lhs", "rhs", "ratio", "stderr", "verdict", "provenance"]);
    w.write_record(&header)?;
    for s in &r.samples {
        let mut row: Vec<String> =
            names.iter().map(|n| s.param(n).map(format_float).unwrap_or_default()).collect();
        row.push(format_float(s.lhs));
        row.push(format_float(s.rhs));
        row.push(format_float(s.ratio));
        row.push(s.stderr.map(format_float).unwrap_or_default());
        row.push(s.verdict.as_str().into());
        row.push(s.provenance.as_str().into());
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::io("csv buffer", e.into_error()))
}

/// Two-column `param ratio` series sorted by the parameter, one block per
/// report and parameter. Samples without the parameter are skipped.
pub fn report_series(r: &BoundReport) -> Vec<(String, String)> {
    param_names(r)
        .into_iter()
        .map(|name| {
            let mut pts: Vec<(f64, f64)> =
                r.samples.iter().filter_map(|s| s.param(&name).map(|v| (v, s.ratio))).collect();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut text = format!("# {} ratio vs {}\n# {} ratio\n", r.inequality_id, name, name);
            for (x, y) in pts {
                let _ = writeln!(text, "{} {}", format_float(x), format_float(y));
            }
            (name, text)
        })
        .collect()
}

fn report_summary(r: &BoundReport, csv_name: &str) -> Value {
    let counts: serde_json::Map<String, Value> =
        [Verdict::Pass, Verdict::Fail, Verdict::Inconclusive, Verdict::Unreliable]
            .iter()
            .map(|v| (v.as_str().to_string(), json!(r.count(*v))))
            .collect();
    json!({
        "id": r.inequality_id,
        "verdict": r.verdict.as_str(),
        "fitted_constant": r.fitted_constant,
        "refined_constant": r.refined_constant,
        "constants": r.constants,
        "confidence": r.confidence,
        "samples": r.samples.len(),
        "counts": counts,
        "notes": r.notes,
        "table": csv_name,
    })
}

/// Writes every output file and then the MANIFEST. `error` marks an
/// aborted run; whatever was completed is still written.
pub fn write_outputs(dir: &Path, run: &RunReport, error: Option<&CliError>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut w = Writer { dir: dir.to_path_buf(), written: Vec::new() };
    let status = if error.is_some() { "aborted" } else { "complete" };

    let mut summaries = Vec::new();
    for r in &run.reports {
        let id = slug(&r.inequality_id);
        let csv_name = format!("{id}.csv");
        w.put(&csv_name, &report_csv(r)?)?;
        for (param, text) in report_series(r) {
            w.put(&format!("{id}.{}.dat", slug(&param)), text.as_bytes())?;
        }
        summaries.push(report_summary(r, &csv_name));
    }

    let code = match error {
        Some(e) => e.exit_code(),
        None => run.exit_code(),
    };
    let summary = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "error": error.map(|e| e.to_string()),
        "exit_code": code,
        "experiment": run.config.experiment.kind(),
        "config": run.config,
        "reports": summaries,
        "extras": run.extras,
    });
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    w.put("summary.json", text.as_bytes())?;

    let mut manifest = format!("status {status}\n");
    for (name, size, hash) in &w.written {
        let _ = writeln!(manifest, "{hash}  {size:>10}  {name}");
    }
    let path = dir.join("MANIFEST");
    fs::write(&path, manifest).map_err(|e| CliError::io(&path, e))
}
