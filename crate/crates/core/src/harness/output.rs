//! `runs.csv` rows and the log-residual summary.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::problems::io::fmt_f64;

pub const RUNS_HEADER: &str = "experiment_id,algorithm,seed,epoch,iter,rel_residual,abs_residual,wall_ms";
pub const SUMMARY_HEADER: &str =
    "algorithm,epoch,seeds,mean_rel_residual,mean_log10_rel_residual,min_log10_rel_residual,max_log10_rel_residual";

/// Floor applied before taking `log10` of a zero residual.
pub const LOG_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsvRow {
    pub experiment_id: String,
    pub algorithm: String,
    pub seed: u64,
    pub epoch: f64,
    pub iter: usize,
    pub rel_residual: f64,
    pub abs_residual: f64,
    pub wall_ms: f64,
}

pub fn runs_to_string(rows: &[CsvRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 120);
    out.push_str(RUNS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.experiment_id,
            r.algorithm,
            r.seed,
            fmt_f64(r.epoch),
            r.iter,
            fmt_f64(r.rel_residual),
            fmt_f64(r.abs_residual),
            fmt_f64(r.wall_ms)
        );
    }
    out
}

/// Parses `runs.csv`; errors carry the 1-based line number.
pub fn parse_runs(path: &Path, text: &str) -> Result<Vec<CsvRow>> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(i + 1, |p| p.line() as usize);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header.join(",") != RUNS_HEADER {
                return Err(perr(line, format!("expected header {RUNS_HEADER:?}")));
            }
            continue;
        }
        if rec.len() != 8 {
            return Err(perr(line, format!("expected 8 fields, found {}", rec.len())));
        }
        let f = |j: usize| -> Result<f64> {
            rec[j]
                .parse::<f64>()
                .map_err(|_| perr(line, format!("field {} is not a number: {:?}", j + 1, &rec[j])))
        };
        let u = |j: usize| -> Result<u64> {
            rec[j]
                .parse::<u64>()
                .map_err(|_| perr(line, format!("field {} is not an integer: {:?}", j + 1, &rec[j])))
        };
        rows.push(CsvRow {
            experiment_id: rec[0].to_string(),
            algorithm: rec[1].to_string(),
            seed: u(2)?,
            epoch: f(3)?,
            iter: u(4)? as usize,
            rel_residual: f(5)?,
            abs_residual: f(6)?,
            wall_ms: f(7)?,
        });
    }
    if rows.is_empty() && text.trim().is_empty() {
        return Err(perr(1, "empty file".into()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub epoch: f64,
    pub seeds: usize,
    /// Arithmetic mean of the interpolated residuals.
    pub mean_rel_residual: f64,
    pub mean_log10: f64,
    pub min_log10: f64,
    pub max_log10: f64,
}

fn log10_floor(v: f64) -> f64 {
    v.max(LOG_FLOOR).log10()
}

/// Linear interpolation of `log10 rel_residual` at `epoch` over a series sorted by epoch.
pub fn interp_log10(series: &[(f64, f64)], epoch: f64) -> Option<f64> {
    let first = series.first()?;
    let last = series.last()?;
    if epoch < first.0 || epoch > last.0 {
        return None;
    }
    let j = series.partition_point(|&(e, _)| e < epoch);
    let (e1, r1) = series[j];
    if e1 == epoch || j == 0 {
        // The last record at a repeated epoch wins.
        let k = j + series[j..].partition_point(|&(e, _)| e <= epoch) - 1;
        return Some(log10_floor(series[k].1));
    }
    let (e0, r0) = series[j - 1];
    let t = (epoch - e0) / (e1 - e0);
    Some((1.0 - t) * log10_floor(r0) + t * log10_floor(r1))
}

/// Per-algorithm statistics on the integer epochs covered by every seed's series.
/// Algorithms appear in first-seen order.
pub fn summarize_rows(rows: &[CsvRow]) -> Vec<SummaryRow> {
    let mut algos: Vec<&str> = Vec::new();
    for r in rows {
        if !algos.contains(&r.algorithm.as_str()) {
            algos.push(&r.algorithm);
        }
    }
    let mut out = Vec::new();
    for algo in algos {
        let mut seeds: Vec<u64> = Vec::new();
        for r in rows.iter().filter(|r| r.algorithm == algo) {
            if !seeds.contains(&r.seed) {
                seeds.push(r.seed);
            }
        }
        let series: Vec<Vec<(f64, f64)>> = seeds
            .iter()
            .map(|&s| {
                let mut v: Vec<(usize, f64, f64)> = rows
                    .iter()
                    .filter(|r| r.algorithm == algo && r.seed == s)
                    .map(|r| (r.iter, r.epoch, r.rel_residual))
                    .collect();
                v.sort_by_key(|a| a.0);
                v.into_iter().map(|(_, e, r)| (e, r)).collect()
            })
            .collect();
        let lo = series.iter().map(|s| s[0].0).fold(f64::NEG_INFINITY, f64::max);
        let hi = series.iter().map(|s| s[s.len() - 1].0).fold(f64::INFINITY, f64::min);
        if !(lo <= hi) {
            continue;
        }
        let mut g = lo.ceil();
        while g <= hi {
            let logs: Vec<f64> = series.iter().filter_map(|s| interp_log10(s, g)).collect();
            let m = logs.len() as f64;
            out.push(SummaryRow {
                algorithm: algo.to_string(),
                epoch: g,
                seeds: logs.len(),
                mean_rel_residual: logs.iter().map(|l| 10f64.powf(*l)).sum::<f64>() / m,
                mean_log10: logs.iter().sum::<f64>() / m,
                min_log10: logs.iter().copied().fold(f64::INFINITY, f64::min),
                max_log10: logs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
            g += 1.0;
        }
    }
    out
}

pub fn summary_to_string(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.algorithm,
            fmt_f64(r.epoch),
            r.seeds,
            fmt_f64(r.mean_rel_residual),
            fmt_f64(r.mean_log10),
            fmt_f64(r.min_log10),
            fmt_f64(r.max_log10)
        );
    }
    out
}

/// Reads `dir/runs.csv`, writes `dir/summary.csv` and returns its rows.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>> {
    let path = dir.join("runs.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let rows = parse_runs(&path, &text)?;
    let summary = summarize_rows(&rows);
    let out = dir.join("summary.csv");
    std::fs::write(&out, summary_to_string(&summary)).map_err(|e| Error::io(&out, e))?;
    Ok(summary)
}
