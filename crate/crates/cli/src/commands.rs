//! Command-line interface and subcommand dispatch.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gpps_core::data::write_csv as write_dataset;
use gpps_core::Grouped;

use crate::check::run_checks;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::experiments::{drift_curves, generate_pair, learning_curves, table, tap_single, Method};
use crate::output::{self, sidecar_path, write_json, write_with_sidecar};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CHECK_FAILED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gpps", version, about = "Fairness drift and target-aware thresholds under group-conditional prior shift")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sweep the target prevalence grid with fixed thresholds.
    DriftCurves(Common),
    /// Compare source-only, no-correction, TAP-GPPS and oracle thresholds.
    Table(Common),
    /// Prevalence error and DP gap against the unlabeled target size.
    LearningCurves(Common),
    /// Fit one TAP-GPPS classifier and save it as JSON.
    TapGpps(Common),
    /// Run the property suite; exits 2 when a hard check fails.
    Check(Common),
    /// Write a labeled source and target sample as CSV.
    GenData(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::DriftCurves(_) => "drift-curves",
            Command::Table(_) => "table",
            Command::LearningCurves(_) => "learning-curves",
            Command::TapGpps(_) => "tap-gpps",
            Command::Check(_) => "check",
            Command::GenData(_) => "gen-data",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::DriftCurves(c)
            | Command::Table(c)
            | Command::LearningCurves(c)
            | Command::TapGpps(c)
            | Command::Check(c)
            | Command::GenData(c) => c,
        }
    }

    fn default_seeds(&self) -> std::ops::Range<u64> {
        match self {
            Command::DriftCurves(_) => 0..5,
            Command::Table(_) => 0..10,
            Command::LearningCurves(_) => 0..20,
            Command::TapGpps(_) | Command::Check(_) | Command::GenData(_) => 0..1,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file; defaults are used for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds, e.g. `0,1,2`.
    #[arg(long, value_delimiter = ',')]
    pub seed_list: Option<Vec<u64>>,
    /// Config override `dotted.key=value`; the value is parsed as JSON. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Suppress the stdout summary.
    #[arg(long)]
    pub quiet: bool,
}

/// Config file, then `--set` overrides, then `--out` and `--seed-list`.
pub fn resolve_config(common: &Common) -> CliResult<ExperimentConfig> {
    let base = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut config = base.with_overrides(&common.overrides)?;
    if let Some(out) = &common.out {
        config.out = out.clone();
    }
    if let Some(seeds) = &common.seed_list {
        config.seeds = Some(seeds.clone());
    }
    config.validate()?;
    Ok(config)
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> i32 {
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn say(quiet: bool, line: String) {
    if !quiet {
        println!("{line}");
    }
}

fn dispatch(command: &Command) -> CliResult<i32> {
    let common = command.common();
    let config = resolve_config(common)?;
    let seeds = config.seeds_or(command.default_seeds());
    let name = command.name();
    let out = config.out.clone();
    let k = config.group_count();
    let q = common.quiet;
    match command {
        Command::DriftCurves(_) => {
            let r = drift_curves(&config, &seeds)?;
            write_with_sidecar(&out.join("drift_curves.csv"), &output::drift_rows(&r, k), name, &seeds, &config)?;
            write_with_sidecar(&out.join("drift_summary.csv"), &output::drift_summary(&r, k), name, &seeds, &config)?;
            say(q, format!("grid points: {}, seeds: {}", r.summary.len(), seeds.len()));
            say(q, format!("max |EO gap shift|: {:.4}", r.max_eo_shift()));
            say(q, format!("max |DP gap - predicted|: {:.4}", r.max_dp_deviation()));
            say(q, format!("max |PPV - predicted|: {:.4}", r.max_ppv_deviation()));
        }
        Command::Table(_) => {
            let r = table(&config, &seeds)?;
            write_with_sidecar(&out.join("table_runs.csv"), &output::table_rows(&r, k), name, &seeds, &config)?;
            write_with_sidecar(&out.join("table.csv"), &output::table_summary(&r), name, &seeds, &config)?;
            for m in Method::ALL {
                let s = r.method(m);
                say(
                    q,
                    format!(
                        "{:<18} acc {:.4} ± {:.4}  DP {:.4} ± {:.4}  EO {:.4} ± {:.4}",
                        s.label, s.accuracy.mean, s.accuracy.std, s.gap_dp.mean, s.gap_dp.std, s.gap_eo.mean, s.gap_eo.std
                    ),
                );
            }
        }
        Command::LearningCurves(_) => {
            let r = learning_curves(&config, &seeds)?;
            write_with_sidecar(&out.join("learning_curves.csv"), &output::learning_rows(&r, k), name, &seeds, &config)?;
            write_with_sidecar(&out.join("learning_summary.csv"), &output::learning_summary(&r), name, &seeds, &config)?;
            for s in &r.summary {
                say(q, format!("m {:>6}  |pi_hat - pi| {:.4}  DP {:.4}", s.m, s.abs_error.mean, s.gap_dp.mean));
            }
            say(q, format!("log-log slope of prevalence error: {:.3}", r.error_slope));
        }
        Command::TapGpps(_) => {
            let run = tap_single(&config, seeds[0])?;
            write_with_sidecar(&out.join("tap_gpps_search.csv"), &output::tap_search(&run), name, &seeds[..1], &config)?;
            let model = out.join("tap_gpps_model.json");
            write_json(&model, &run.classifier)?;
            let c = &run.classifier;
            say(q, format!("gamma {:.2}, thresholds {:?}", c.gamma, c.thresholds.thresholds()));
            say(q, format!("estimated target prevalence {:?}", c.pi_tgt));
            say(q, format!("estimated risk {:.4}, estimated DP gap {:.4}", c.estimated_risk, c.estimated_dp_gap));
            say(
                q,
                format!(
                    "target test: accuracy {:.4}, DP gap {:.4}, EO gap {:.4}{}",
                    run.target_test.accuracy,
                    run.target_test.gap_dp,
                    run.target_test.gap_eo,
                    if c.infeasible { " (infeasible)" } else { "" }
                ),
            );
            say(q, format!("classifier written to {}", model.display()));
        }
        Command::Check(_) => {
            let report = run_checks(&config, seeds[0]);
            write_with_sidecar(&out.join("check.csv"), &output::check_rows(&report), name, &seeds[..1], &config)?;
            write_json(&out.join("check_report.json"), &report)?;
            for o in &report.outcomes {
                let tag = match (o.passed, o.hard) {
                    (true, _) => "ok  ",
                    (false, true) => "FAIL",
                    (false, false) => "warn",
                };
                say(q, format!("{tag} {}: {}", o.name, o.detail));
            }
            say(
                q,
                format!("{} hard failures, {} soft failures", report.hard_failures, report.soft_failures),
            );
            if !report.passed() {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Command::GenData(_) => {
            let (source, target) = generate_pair(&config, seeds[0])?;
            for (file, data) in [("source.csv", &source), ("target.csv", &target)] {
                let path = out.join(file);
                write_dataset_file(&path, data)?;
                write_json(
                    &sidecar_path(&path),
                    &serde_json::json!({ "command": name, "seeds": &seeds[..1], "config": &config }),
                )?;
                say(q, format!("wrote {} rows to {}", data.len(), path.display()));
            }
        }
    }
    Ok(EXIT_OK)
}

fn write_dataset_file(path: &Path, data: &gpps_core::LabeledDataset64) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_dataset(data, BufWriter::new(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["gpps", "table", "--seed-list", "3,4", "--set", "m=100", "--out", "x"]).unwrap();
        let c = cli.command.common();
        assert_eq!(c.seed_list.as_deref(), Some(&[3, 4][..]));
        let config = resolve_config(c).unwrap();
        assert_eq!((config.m, config.out.as_path()), (100, Path::new("x")));
        assert_eq!(config.seeds_or(cli.command.default_seeds()), vec![3, 4]);
    }

    #[test]
    fn invalid_config_is_an_error() {
        let cli = Cli::try_parse_from(["gpps", "check", "--set", "target_prevalence=[0.5, 1.5]"]).unwrap();
        let err = resolve_config(cli.command.common()).unwrap_err();
        assert!(err.to_string().contains("target_prevalence"), "{err}");
    }
}
