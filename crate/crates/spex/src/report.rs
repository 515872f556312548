//! Plot-ready CSV and JSON reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::experiment::ExperimentResult;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 19] = [
    "algorithm",
    "config",
    "batch",
    "seed",
    "makespan",
    "baseline_makespan",
    "speedup",
    "throughput",
    "hit_rate_d1",
    "hit_rate_d2",
    "hit_rate_d3",
    "hit_rate_d4",
    "hit_rate_d5",
    "committed_tokens",
    "reused_tokens",
    "wasted_tokens",
    "critical_path_tokens_saved",
    "early_termination_rate",
    "vote_accuracy",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// One CSV line: one seed of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: String,
    /// Enabled flags joined with `+`, or `none`.
    pub config: String,
    pub batch: u32,
    pub seed: u64,
    pub makespan: f64,
    pub baseline_makespan: f64,
    pub speedup: f64,
    pub throughput: f64,
    pub hit_rate_d1: Option<f64>,
    pub hit_rate_d2: Option<f64>,
    pub hit_rate_d3: Option<f64>,
    pub hit_rate_d4: Option<f64>,
    pub hit_rate_d5: Option<f64>,
    pub committed_tokens: u64,
    pub reused_tokens: u64,
    pub wasted_tokens: u64,
    pub critical_path_tokens_saved: u64,
    pub early_termination_rate: f64,
    pub vote_accuracy: f64,
}

pub fn rows(results: &[ExperimentResult]) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for r in results {
        for rep in &r.repetitions {
            let m = &rep.spex;
            out.push(ReportRow {
                algorithm: r.algorithm.clone(),
                config: r.flags.label().replace(',', "+"),
                batch: r.batch_size,
                seed: rep.seed,
                makespan: m.makespan,
                baseline_makespan: m.baseline_makespan,
                speedup: m.speedup,
                throughput: m.throughput,
                hit_rate_d1: m.hit_rate(1),
                hit_rate_d2: m.hit_rate(2),
                hit_rate_d3: m.hit_rate(3),
                hit_rate_d4: m.hit_rate(4),
                hit_rate_d5: m.hit_rate(5),
                committed_tokens: m.committed_tokens,
                reused_tokens: m.reused_tokens,
                wasted_tokens: m.wasted_tokens,
                critical_path_tokens_saved: m.critical_path_tokens_saved,
                early_termination_rate: m.early_termination_rate,
                vote_accuracy: m.vote_accuracy,
            });
        }
    }
    out
}

pub fn write_csv<W: Write>(results: &[ExperimentResult], out: W) -> Result<(), ReportError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows(results) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write>(results: &[ExperimentResult], mut out: W) -> Result<(), ReportError> {
    serde_json::to_writer_pretty(&mut out, results)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn render(results: &[ExperimentResult], format: ReportFormat) -> Result<Vec<u8>, ReportError> {
    let mut buf = Vec::new();
    match format {
        ReportFormat::Csv => write_csv(results, &mut buf)?,
        ReportFormat::Json => write_json(results, &mut buf)?,
    }
    Ok(buf)
}

/// Writes the report to `path`, or to stdout when `path` is `None`.
pub fn emit_report(
    results: &[ExperimentResult],
    format: ReportFormat,
    path: Option<&Path>,
) -> Result<(), ReportError> {
    let bytes = render(results, format)?;
    match path {
        Some(p) => std::fs::write(p, bytes)?,
        None => std::io::stdout().lock().write_all(&bytes)?,
    }
    Ok(())
}

pub fn read_json(text: &str) -> Result<Vec<ExperimentResult>, ReportError> {
    Ok(serde_json::from_str(text)?)
}
