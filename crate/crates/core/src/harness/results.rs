//! Result tables: CSV and JSON-lines output of Monte Carlo sweeps.

use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::montecarlo::{Aggregate, MonteCarloReport, TrialRecord};
use super::scenario::Estimator;
use crate::{Error, Result};

/// Comment lines written ahead of the CSV header.
pub const CSV_PREAMBLE: &[&str] = &[
    "angles and errors in radians; sq_err is the squared error after minimum-total-error matching",
    "rmse convention: root of the mean squared error pooled over angles and successful trials",
    "flops_est: 1 complex multiply-add = 8 real flops",
    "aggregate rows have trial = -1 and k_index = -1; sq_err holds the pooled mse, iteration and flop columns hold means, converged and diverged_lambda hold rates",
    "crb column reserved, left empty",
];

/// One line of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub estimator: String,
    pub trial: i64,
    pub k_index: i64,
    pub theta_true: Option<f64>,
    pub theta_hat: Option<f64>,
    pub sq_err: Option<f64>,
    pub iters_stage1: Option<f64>,
    pub iters_stage3: Option<f64>,
    pub flops_est: Option<f64>,
    pub converged: f64,
    pub diverged_lambda: f64,
    pub crb: Option<f64>,
}

impl ResultRow {
    pub fn is_aggregate(&self) -> bool {
        self.trial < 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "jsonl" | "json-lines" => Ok(Self::Jsonl),
            other => Err(Error::InvalidInput(format!("unknown output format '{other}'"))),
        }
    }
}

fn flag(b: bool) -> f64 {
    if b { 1.0 } else { 0.0 }
}

/// One row per estimated angle.
pub fn trial_rows(rec: &TrialRecord) -> Vec<ResultRow> {
    let is_music = rec.estimator == Estimator::Music;
    let iter = |v: usize| if is_music { None } else { Some(v as f64) };
    rec.theta_true
        .iter()
        .enumerate()
        .map(|(k, &t)| ResultRow {
            snr_db: rec.snr_db,
            estimator: rec.estimator.name().to_string(),
            trial: rec.trial as i64,
            k_index: k as i64,
            theta_true: Some(t),
            theta_hat: rec.theta_hat.as_ref().map(|v| v[k]),
            sq_err: rec.sq_err.as_ref().map(|v| v[k]),
            iters_stage1: iter(rec.iters_stage1),
            iters_stage3: iter(rec.iters_stage3),
            flops_est: rec.flops_est,
            converged: flag(rec.converged),
            diverged_lambda: flag(rec.diverged_lambda),
            crb: None,
        })
        .collect()
}

pub fn aggregate_row(agg: &Aggregate) -> ResultRow {
    ResultRow {
        snr_db: agg.snr_db,
        estimator: agg.estimator.name().to_string(),
        trial: -1,
        k_index: -1,
        theta_true: None,
        theta_hat: None,
        sq_err: agg.mse,
        iters_stage1: agg.mean_iters_stage1,
        iters_stage3: agg.mean_iters_stage3,
        flops_est: agg.mean_flops,
        converged: agg.converged_rate,
        diverged_lambda: agg.divergence_rate,
        crb: None,
    }
}

/// Per-trial rows followed by the aggregate block.
pub fn report_rows(report: &MonteCarloReport) -> Vec<ResultRow> {
    let mut rows: Vec<ResultRow> = report.records.iter().flat_map(trial_rows).collect();
    rows.extend(report.aggregates.iter().map(aggregate_row));
    rows
}

pub fn write_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    for line in CSV_PREAMBLE {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

pub fn write_jsonl<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    Ok(rows)
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow], format: OutputFormat) -> Result<()> {
    match format {
        OutputFormat::Csv => write_csv(out, rows),
        OutputFormat::Jsonl => write_jsonl(out, rows),
    }
}
