//! Merges `*.result.json` files from a directory into one summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::experiment::{ExperimentResult, OrderingOutcome};
use crate::io::{read_json, write_atomic};
use crate::{io_err, LabError, Result};

#[derive(Debug, Default)]
pub struct Report {
    /// One result per config hash, in file-name order.
    pub results: Vec<(PathBuf, ExperimentResult)>,
    pub warnings: Vec<String>,
    /// `(experiment name, failed ordering)`.
    pub violations: Vec<(String, OrderingOutcome)>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    experiment: &'a str,
    config_hash: &'a str,
    variant: &'a str,
    arch: &'a str,
    dim: usize,
    param_count: usize,
    val_loss: f64,
    effrank_entropy: Option<f64>,
    effrank_95: Option<usize>,
    eta: Option<f64>,
    nuclear_norm: Option<f64>,
    status: &'a str,
}

/// Reads every `*.result.json` under `dir` (not recursive). Unreadable
/// files and duplicate config hashes are skipped with a warning.
pub fn collect(dir: &Path) -> Result<Report> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".result.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(LabError::Config(format!("no *.result.json files in {}", dir.display())));
    }
    let mut report = Report::default();
    let mut seen: BTreeMap<String, PathBuf> = BTreeMap::new();
    for path in paths {
        let result: ExperimentResult = match read_json(&path) {
            Ok(r) => r,
            Err(e) => {
                report.warnings.push(format!("skipping malformed {}: {e}", path.display()));
                continue;
            }
        };
        if !result.provenance_valid().unwrap_or(false) {
            report.warnings.push(format!("{}: config hash does not match its config", path.display()));
        }
        let hash = result.provenance.config_hash.clone();
        if let Some(first) = seen.get(&hash) {
            report.warnings.push(format!(
                "skipping {}: same config hash {} as {}",
                path.display(),
                &hash[..hash.len().min(12)],
                first.display()
            ));
            continue;
        }
        seen.insert(hash, path.clone());
        for o in result.orderings.iter().filter(|o| !o.holds) {
            report.violations.push((result.name.clone(), o.clone()));
        }
        report.results.push((path, result));
    }
    Ok(report)
}

impl Report {
    pub fn summary_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for (_, r) in &self.results {
            for rec in &r.records {
                w.serialize(SummaryRow {
                    experiment: &r.name,
                    config_hash: &r.provenance.config_hash,
                    variant: &rec.variant,
                    arch: &rec.arch,
                    dim: rec.dim,
                    param_count: rec.param_count,
                    val_loss: rec.val_loss,
                    effrank_entropy: rec.effrank_entropy,
                    effrank_95: rec.effrank_95,
                    eta: rec.eta,
                    nuclear_norm: rec.nuclear_norm,
                    status: if rec.status == crate::experiment::Status::Ok { "ok" } else { "fail" },
                })?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| LabError::Config(e.to_string()))?).expect("UTF-8"))
    }

    /// Writes `summary.csv` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("summary.csv");
        write_atomic(&path, self.summary_csv()?.as_bytes())?;
        Ok(path)
    }
}
