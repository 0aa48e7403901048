//! CSV outputs and their `<file>.config.json` sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use gpps_core::metrics::GapReport;
use serde::Serialize;
use serde_json::json;

use crate::check::CheckReport;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{DriftResult, LearningResult, TableResult, TapRun};
use crate::stats::MeanStd;

pub type Table = (Vec<String>, Vec<Vec<String>>);

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

fn per_group(prefix: &str, k: usize) -> Vec<String> {
    (0..k).map(|a| format!("{prefix}_{a}")).collect()
}

fn mean_std(name: &str) -> [String; 2] {
    [format!("{name}_mean"), format!("{name}_std")]
}

fn ms(v: &MeanStd) -> [String; 2] {
    [num(v.mean), num(v.std)]
}

fn ms_opt(v: &Option<MeanStd>) -> [String; 2] {
    match v {
        Some(v) => ms(v),
        None => [String::new(), String::new()],
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    csv.with_file_name(name)
}

pub fn write_csv(path: &Path, table: &Table) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(&table.0)?;
    for row in &table.1 {
        w.write_record(row)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// CSV plus the sidecar holding the command, seeds and resolved config.
pub fn write_with_sidecar(
    path: &Path,
    table: &Table,
    command: &str,
    seeds: &[u64],
    config: &ExperimentConfig,
) -> CliResult<()> {
    write_csv(path, table)?;
    write_json(
        &sidecar_path(path),
        &json!({ "command": command, "seeds": seeds, "config": config }),
    )
}

fn report_cells(r: &GapReport<f64>) -> Vec<String> {
    r.csv_row()
}

pub fn drift_rows(result: &DriftResult, k: usize) -> Table {
    let mut h = header(&["seed", "point", "shift"]);
    h.extend(per_group("prevalence", k));
    h.extend(GapReport::<f64>::csv_header(k));
    h.extend(header(&["source_gap_eo", "source_gap_dp", "predicted_gap_dp", "predicted_gap_ppv"]));
    h.extend(per_group("predicted_ar", k));
    h.extend(per_group("predicted_ppv", k));
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.seed.to_string(), r.point.to_string(), num(r.shift)];
            row.extend(r.prevalence.iter().copied().map(num));
            row.extend(report_cells(&r.report));
            row.extend([
                num(r.source_gap_eo),
                num(r.source_gap_dp),
                num(r.predicted_gap_dp),
                opt(r.predicted_gap_ppv),
            ]);
            row.extend(r.predicted_ar.iter().copied().map(num));
            row.extend(r.predicted_ppv.iter().copied().map(opt));
            row
        })
        .collect();
    (h, rows)
}

pub fn drift_summary(result: &DriftResult, k: usize) -> Table {
    let mut h = header(&["point", "shift"]);
    h.extend(per_group("prevalence", k));
    for name in ["gap_eo", "source_gap_eo", "gap_dp", "predicted_gap_dp", "gap_ppv", "predicted_gap_ppv"] {
        h.extend(mean_std(name));
    }
    h.extend(per_group("ppv", k));
    h.extend(per_group("predicted_ppv", k));
    let rows = result
        .summary
        .iter()
        .map(|s| {
            let mut row = vec![s.point.to_string(), num(s.shift)];
            row.extend(s.prevalence.iter().copied().map(num));
            for v in [&s.gap_eo, &s.source_gap_eo, &s.gap_dp, &s.predicted_gap_dp] {
                row.extend(ms(v));
            }
            row.extend(ms_opt(&s.gap_ppv));
            row.extend(ms_opt(&s.predicted_gap_ppv));
            row.extend(s.ppv.iter().copied().map(opt));
            row.extend(s.predicted_ppv.iter().copied().map(opt));
            row
        })
        .collect();
    (h, rows)
}

pub fn table_rows(result: &TableResult, k: usize) -> Table {
    let mut h = header(&["seed", "method", "gamma", "infeasible"]);
    h.extend(per_group("threshold", k));
    h.extend(per_group("pi_tgt", k));
    h.extend(GapReport::<f64>::csv_header(k));
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.seed.to_string(),
                r.method.label().to_string(),
                opt(r.gamma),
                r.infeasible.to_string(),
            ];
            row.extend(r.thresholds.iter().copied().map(num));
            match &r.pi_tgt {
                Some(p) => row.extend(p.iter().copied().map(num)),
                None => row.extend(std::iter::repeat_n(String::new(), k)),
            }
            row.extend(report_cells(&r.report));
            row
        })
        .collect();
    (h, rows)
}

pub fn table_summary(result: &TableResult) -> Table {
    let mut h = header(&["method"]);
    for name in ["accuracy", "gap_dp", "gap_eo", "gap_ppv"] {
        h.extend(mean_std(name));
    }
    h.extend(header(&["runs", "infeasible_runs"]));
    let rows = result
        .summary
        .iter()
        .map(|s| {
            let mut row = vec![s.label.clone()];
            row.extend(ms(&s.accuracy));
            row.extend(ms(&s.gap_dp));
            row.extend(ms(&s.gap_eo));
            row.extend(ms_opt(&s.gap_ppv));
            row.extend([s.accuracy.count.to_string(), s.infeasible_runs.to_string()]);
            row
        })
        .collect();
    (h, rows)
}

pub fn learning_rows(result: &LearningResult, k: usize) -> Table {
    let mut h = header(&["seed", "m"]);
    h.extend(per_group("pi_tgt", k));
    h.extend(header(&["abs_error", "gap_dp", "accuracy", "infeasible"]));
    let rows = result
        .rows
        .iter()
        .map(|r| {
            let mut row = vec![r.seed.to_string(), r.m.to_string()];
            row.extend(r.pi_tgt.iter().copied().map(num));
            row.extend([num(r.abs_error), num(r.gap_dp), num(r.accuracy), r.infeasible.to_string()]);
            row
        })
        .collect();
    (h, rows)
}

pub fn learning_summary(result: &LearningResult) -> Table {
    let mut h = header(&["m"]);
    for name in ["abs_error", "gap_dp", "accuracy"] {
        h.extend(mean_std(name));
    }
    let rows = result
        .summary
        .iter()
        .map(|s| {
            let mut row = vec![s.m.to_string()];
            row.extend(ms(&s.abs_error));
            row.extend(ms(&s.gap_dp));
            row.extend(ms(&s.accuracy));
            row
        })
        .collect();
    (h, rows)
}

/// Estimated risk and DP gaps along the gamma grid of one run.
pub fn tap_search(run: &TapRun) -> Table {
    let k = run.classifier.group_count();
    let mut h = header(&["gamma", "estimated_risk", "estimated_dp_gap", "predicted_dp_gap", "selected"]);
    h.extend(per_group("threshold", k));
    h.extend(per_group("achieved_ar", k));
    let rows = run
        .classifier
        .search
        .iter()
        .map(|p| {
            let mut row = vec![
                num(p.gamma),
                num(p.estimated_risk),
                num(p.estimated_dp_gap),
                num(p.predicted_dp_gap),
                (p.gamma == run.classifier.gamma).to_string(),
            ];
            row.extend(p.thresholds.iter().copied().map(num));
            row.extend(p.achieved.iter().copied().map(num));
            row
        })
        .collect();
    (h, rows)
}

pub fn check_rows(report: &CheckReport) -> Table {
    let h = header(&["name", "kind", "passed", "value", "limit", "detail"]);
    let rows = report
        .outcomes
        .iter()
        .map(|o| {
            vec![
                o.name.clone(),
                if o.hard { "hard" } else { "soft" }.to_string(),
                o.passed.to_string(),
                opt(o.value),
                opt(o.limit),
                o.detail.clone(),
            ]
        })
        .collect();
    (h, rows)
}
