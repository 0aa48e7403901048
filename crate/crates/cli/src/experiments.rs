//! Seeded experiment runners behind the subcommands.
//!
//! Every dataset of a run is drawn from its own stream `derive_seed(seed, k)`,
//! so changing one sample size never perturbs the other draws.

use gpps_core::data::{generate_gaussian, gpps_resample, load_csv};
use gpps_core::drift::{predict_acceptance_rate, predict_ppv, RatePoint};
use gpps_core::metrics::{dp_gap, gap_report, max_pairwise, GapReport};
use gpps_core::models::{calibrate_temperature, gaussian_bayes_posterior, train_logistic, CalibrationFit};
use gpps_core::rng::derive_seed;
use gpps_core::shift::{EstimatorConfig, EstimatorMethod};
use gpps_core::tapgpps::{run_tap_gpps, select_thresholds, FairClassifier, TapConfig};
use gpps_core::{
    empirical_prevalence, split_dataset, GaussianParams64, LabeledDataset64, PrevalenceTable64,
    ScoreModel64, SplitSpec, ThresholdRule64,
};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, ExperimentConfig, ModelChoice};
use crate::error::CliResult;
use crate::oracle::oracle_thresholds;
use crate::stats::{log_log_slope, MeanStd};

const STREAM_SOURCE: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_TARGET: u64 = 3;
const STREAM_TARGET_TEST: u64 = 4;
const STREAM_GRID: u64 = 1_000;
const STREAM_M_GRID: u64 = 2_000;

/// Draws labeled rows at requested per-group prevalences.
#[derive(Debug, Clone)]
pub enum Sampler {
    Gaussian(GaussianParams64),
    /// GPPS resampling of a fixed pool.
    Pool(LabeledDataset64),
}

impl Sampler {
    pub fn from_config(config: &ExperimentConfig) -> CliResult<Self> {
        Ok(match &config.data {
            DataSource::Gaussian { params } => Sampler::Gaussian(params.clone()),
            DataSource::Csv { path, schema } => Sampler::Pool(load_csv(path, schema)?.data),
        })
    }

    pub fn draw(&self, prevalences: &[f64], n_per_group: usize, seed: u64) -> CliResult<LabeledDataset64> {
        let table = PrevalenceTable64::new(prevalences.to_vec())?;
        Ok(match self {
            Sampler::Gaussian(params) => generate_gaussian(params, &table, n_per_group, seed)?,
            Sampler::Pool(pool) => gpps_resample(pool, &table, n_per_group, seed)?,
        })
    }

    pub fn params(&self) -> Option<&GaussianParams64> {
        match self {
            Sampler::Gaussian(p) => Some(p),
            Sampler::Pool(_) => None,
        }
    }
}

/// Source splits and the fitted (calibrated) source posterior of one seed.
#[derive(Debug, Clone)]
pub struct SourceFit {
    pub train: LabeledDataset64,
    pub validation: LabeledDataset64,
    pub test: LabeledDataset64,
    pub model: ScoreModel64,
    pub pi_src: PrevalenceTable64,
    pub training_iterations: Option<usize>,
    pub calibration: Option<CalibrationFit<f64>>,
}

pub fn fit_source(config: &ExperimentConfig, sampler: &Sampler, seed: u64) -> CliResult<SourceFit> {
    let source = sampler.draw(&config.source_prevalence, config.n, derive_seed(seed, STREAM_SOURCE))?;
    let plan = SplitSpec {
        seed: derive_seed(seed ^ config.split.seed, STREAM_SPLIT),
        ..config.split
    };
    let [train, validation, test] = split_dataset(&source, &plan)?;
    let pi_src = empirical_prevalence(&train)?;
    let (model, training_iterations, calibration) = match config.model {
        ModelChoice::Logistic => {
            let fit = train_logistic(&train, &config.logistic)?;
            if config.calibrate {
                let (m, c) = calibrate_temperature(&fit.model, &validation, config.calibrate_per_group)?;
                (m, Some(fit.iterations), Some(c))
            } else {
                (fit.model, Some(fit.iterations), None)
            }
        }
        ModelChoice::GaussianBayes => {
            let params = sampler.params().expect("validated: gaussian source");
            (gaussian_bayes_posterior(params, &config.source_table())?, None, None)
        }
    };
    Ok(SourceFit {
        train,
        validation,
        test,
        model,
        pi_src,
        training_iterations,
        calibration,
    })
}

fn fixed_rule(config: &ExperimentConfig) -> CliResult<ThresholdRule64> {
    Ok(ThresholdRule64::new(config.thresholds.clone())?)
}

fn report(model: &ScoreModel64, data: &LabeledDataset64, rule: &ThresholdRule64) -> CliResult<GapReport<f64>> {
    Ok(gap_report(&model.score_rows(data), data, rule)?)
}

// ---------------------------------------------------------------------------
// drift curves

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftRow {
    pub seed: u64,
    pub point: usize,
    pub shift: f64,
    pub prevalence: Vec<f64>,
    pub report: GapReport<f64>,
    /// Source test-split rates behind the predictions.
    pub source_tpr: Vec<f64>,
    pub source_fpr: Vec<f64>,
    pub source_gap_eo: f64,
    pub source_gap_dp: f64,
    pub predicted_ar: Vec<f64>,
    pub predicted_gap_dp: f64,
    pub predicted_ppv: Vec<Option<f64>>,
    pub predicted_gap_ppv: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftSummary {
    pub point: usize,
    pub shift: f64,
    pub prevalence: Vec<f64>,
    pub gap_eo: MeanStd,
    pub source_gap_eo: MeanStd,
    pub gap_dp: MeanStd,
    pub predicted_gap_dp: MeanStd,
    pub gap_ppv: Option<MeanStd>,
    pub predicted_gap_ppv: Option<MeanStd>,
    /// Per-group seed means of empirical and predicted PPV.
    pub ppv: Vec<Option<f64>>,
    pub predicted_ppv: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftResult {
    pub rows: Vec<DriftRow>,
    pub summary: Vec<DriftSummary>,
}

impl DriftResult {
    /// Largest `|mean target EO gap - mean source EO gap|` over the grid.
    pub fn max_eo_shift(&self) -> f64 {
        self.summary
            .iter()
            .map(|s| (s.gap_eo.mean - s.source_gap_eo.mean).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|mean empirical DP gap - mean predicted DP gap|` over the grid.
    pub fn max_dp_deviation(&self) -> f64 {
        self.summary
            .iter()
            .map(|s| (s.gap_dp.mean - s.predicted_gap_dp.mean).abs())
            .fold(0.0, f64::max)
    }

    /// Largest deviation between empirical and predicted PPV (per group and
    /// gap) over grid points where both are defined.
    pub fn max_ppv_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for s in &self.summary {
            if let (Some(e), Some(p)) = (s.gap_ppv, s.predicted_gap_ppv) {
                worst = worst.max((e.mean - p.mean).abs());
            }
            for (e, p) in s.ppv.iter().zip(&s.predicted_ppv) {
                if let (Some(e), Some(p)) = (e, p) {
                    worst = worst.max((e - p).abs());
                }
            }
        }
        worst
    }

    pub fn eo_std_across_grid(&self) -> f64 {
        let means: Vec<f64> = self.summary.iter().map(|s| s.gap_eo.mean).collect();
        crate::stats::std_dev(&means)
    }
}

pub fn drift_curves(config: &ExperimentConfig, seeds: &[u64]) -> CliResult<DriftResult> {
    let sampler = Sampler::from_config(config)?;
    let rule = fixed_rule(config)?;
    let grid = config.prevalence_grid.points();
    let mut rows = Vec::new();
    for &seed in seeds {
        let fit = fit_source(config, &sampler, seed)?;
        let source = report(&fit.model, &fit.test, &rule)?;
        let rates: Vec<RatePoint<f64>> = source
            .tpr
            .iter()
            .zip(&source.fpr)
            .map(|(t, f)| RatePoint::new(*t, *f))
            .collect::<Result<_, _>>()?;
        for (point, (shift, prevalence)) in grid.iter().enumerate() {
            let target = sampler.draw(prevalence, config.n, derive_seed(seed, STREAM_GRID + point as u64))?;
            let tgt = report(&fit.model, &target, &rule)?;
            let predicted_ar = prevalence
                .iter()
                .zip(&rates)
                .map(|(pi, r)| predict_acceptance_rate(*pi, *r))
                .collect::<Result<Vec<_>, _>>()?;
            let predicted_ppv: Vec<Option<f64>> = prevalence
                .iter()
                .zip(&rates)
                .map(|(pi, r)| predict_ppv(*pi, *r).ok())
                .collect();
            let predicted_gap_ppv = predicted_ppv
                .iter()
                .copied()
                .collect::<Option<Vec<f64>>>()
                .map(|v| max_pairwise(v.len(), |a, b| (v[a] - v[b]).abs()));
            rows.push(DriftRow {
                seed,
                point,
                shift: *shift,
                prevalence: prevalence.clone(),
                source_tpr: source.tpr.clone(),
                source_fpr: source.fpr.clone(),
                source_gap_eo: source.gap_eo,
                source_gap_dp: source.gap_dp,
                predicted_gap_dp: dp_gap(&predicted_ar),
                predicted_ar,
                predicted_ppv,
                predicted_gap_ppv,
                report: tgt,
            });
        }
    }
    let summary = grid
        .iter()
        .enumerate()
        .map(|(point, (shift, prevalence))| {
            let at: Vec<&DriftRow> = rows.iter().filter(|r| r.point == point).collect();
            let col = |f: &dyn Fn(&DriftRow) -> f64| MeanStd::of(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
            let opt = |f: &dyn Fn(&DriftRow) -> Option<f64>| {
                MeanStd::of_defined(&at.iter().map(|r| f(r)).collect::<Vec<_>>())
            };
            let k = prevalence.len();
            DriftSummary {
                point,
                shift: *shift,
                prevalence: prevalence.clone(),
                gap_eo: col(&|r| r.report.gap_eo),
                source_gap_eo: col(&|r| r.source_gap_eo),
                gap_dp: col(&|r| r.report.gap_dp),
                predicted_gap_dp: col(&|r| r.predicted_gap_dp),
                gap_ppv: opt(&|r| r.report.gap_ppv),
                predicted_gap_ppv: opt(&|r| r.predicted_gap_ppv),
                ppv: (0..k).map(|a| opt(&|r| r.report.ppv[a]).map(|m| m.mean)).collect(),
                predicted_ppv: (0..k).map(|a| opt(&|r| r.predicted_ppv[a]).map(|m| m.mean)).collect(),
            }
        })
        .collect();
    Ok(DriftResult { rows, summary })
}

// ---------------------------------------------------------------------------
// table

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    SourceOnly,
    NoCorrectionDp,
    TapGppsEm,
    TapGppsBbse,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SourceOnly,
        Method::NoCorrectionDp,
        Method::TapGppsEm,
        Method::TapGppsBbse,
        Method::Oracle,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Method::SourceOnly => "Source-only",
            Method::NoCorrectionDp => "No-correction DP",
            Method::TapGppsEm => "TAP-GPPS (EM)",
            Method::TapGppsBbse => "TAP-GPPS (BBSE)",
            Method::Oracle => "Oracle",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableRow {
    pub seed: u64,
    pub method: Method,
    pub report: GapReport<f64>,
    pub thresholds: Vec<f64>,
    pub gamma: Option<f64>,
    pub infeasible: bool,
    pub pi_tgt: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSummary {
    pub method: Method,
    pub label: String,
    pub accuracy: MeanStd,
    pub gap_dp: MeanStd,
    pub gap_eo: MeanStd,
    pub gap_ppv: Option<MeanStd>,
    pub infeasible_runs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableResult {
    pub rows: Vec<TableRow>,
    pub summary: Vec<TableSummary>,
}

impl TableResult {
    pub fn method(&self, m: Method) -> &TableSummary {
        self.summary.iter().find(|s| s.method == m).expect("every method is summarized")
    }
}

fn tap_config_with(config: &TapConfig<f64>, method: EstimatorMethod) -> TapConfig<f64> {
    TapConfig {
        estimator: EstimatorConfig {
            method,
            ..config.estimator
        },
        ..config.clone()
    }
}

fn fair_row(seed: u64, method: Method, fc: &FairClassifier<f64>, test: &LabeledDataset64) -> CliResult<TableRow> {
    Ok(TableRow {
        seed,
        method,
        report: report(&fc.model, test, &fc.thresholds)?,
        thresholds: fc.thresholds.thresholds().to_vec(),
        gamma: Some(fc.gamma),
        infeasible: fc.infeasible,
        pi_tgt: Some(fc.pi_tgt.clone()),
    })
}

/// One seed of the five-method comparison.
pub fn table_seed(config: &ExperimentConfig, sampler: &Sampler, seed: u64) -> CliResult<Vec<TableRow>> {
    let fit = fit_source(config, sampler, seed)?;
    let target_val = sampler.draw(&config.target_prevalence, config.m, derive_seed(seed, STREAM_TARGET))?;
    let target = target_val.to_unlabeled()?;
    let test = sampler.draw(
        &config.target_prevalence,
        config.target_test,
        derive_seed(seed, STREAM_TARGET_TEST),
    )?;
    let mut rows = Vec::with_capacity(Method::ALL.len());

    let rule = fixed_rule(config)?;
    rows.push(TableRow {
        seed,
        method: Method::SourceOnly,
        report: report(&fit.model, &test, &rule)?,
        thresholds: rule.thresholds().to_vec(),
        gamma: None,
        infeasible: false,
        pi_tgt: None,
    });

    let nc = select_thresholds(&fit.validation, &target, &fit.model, &fit.pi_src, &fit.pi_src, &config.tap)?;
    rows.push(fair_row(seed, Method::NoCorrectionDp, &nc, &test)?);

    for (method, estimator) in [(Method::TapGppsEm, EstimatorMethod::Em), (Method::TapGppsBbse, EstimatorMethod::Bbse)] {
        let tap = tap_config_with(&config.tap, estimator);
        let fc = run_tap_gpps(&fit.train, &fit.validation, &target, &fit.model, &tap)?;
        rows.push(fair_row(seed, method, &fc, &test)?);
    }

    let oracle = oracle_thresholds(&fit.model.score_rows(&target_val), &target_val, config.tap.delta)?;
    rows.push(TableRow {
        seed,
        method: Method::Oracle,
        report: report(&fit.model, &test, &oracle.rule)?,
        thresholds: oracle.rule.thresholds().to_vec(),
        gamma: None,
        infeasible: oracle.infeasible,
        pi_tgt: None,
    });
    Ok(rows)
}

pub fn table(config: &ExperimentConfig, seeds: &[u64]) -> CliResult<TableResult> {
    let sampler = Sampler::from_config(config)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        rows.extend(table_seed(config, &sampler, seed)?);
    }
    let summary = Method::ALL
        .iter()
        .map(|&method| {
            let of: Vec<&TableRow> = rows.iter().filter(|r| r.method == method).collect();
            let col = |f: &dyn Fn(&TableRow) -> f64| MeanStd::of(&of.iter().map(|r| f(r)).collect::<Vec<_>>());
            TableSummary {
                method,
                label: method.label().to_string(),
                accuracy: col(&|r| r.report.accuracy),
                gap_dp: col(&|r| r.report.gap_dp),
                gap_eo: col(&|r| r.report.gap_eo),
                gap_ppv: MeanStd::of_defined(&of.iter().map(|r| r.report.gap_ppv).collect::<Vec<_>>()),
                infeasible_runs: of.iter().filter(|r| r.infeasible).count(),
            }
        })
        .collect();
    Ok(TableResult { rows, summary })
}

// ---------------------------------------------------------------------------
// learning curves

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningRow {
    pub seed: u64,
    pub m: usize,
    pub pi_tgt: Vec<f64>,
    /// Mean over groups of `|pi_hat - pi|`.
    pub abs_error: f64,
    pub gap_dp: f64,
    pub accuracy: f64,
    pub infeasible: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningSummary {
    pub m: usize,
    pub abs_error: MeanStd,
    pub gap_dp: MeanStd,
    pub accuracy: MeanStd,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearningResult {
    pub rows: Vec<LearningRow>,
    pub summary: Vec<LearningSummary>,
    /// Log-log slope of the mean absolute error against `m`.
    pub error_slope: f64,
}

impl LearningResult {
    pub fn at(&self, m: usize) -> Option<&LearningSummary> {
        self.summary.iter().find(|s| s.m == m)
    }
}

pub fn learning_curves(config: &ExperimentConfig, seeds: &[u64]) -> CliResult<LearningResult> {
    let sampler = Sampler::from_config(config)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let fit = fit_source(config, &sampler, seed)?;
        let test = sampler.draw(
            &config.target_prevalence,
            config.target_test,
            derive_seed(seed, STREAM_TARGET_TEST),
        )?;
        for (i, &m) in config.m_grid.iter().enumerate() {
            let target = sampler
                .draw(&config.target_prevalence, m, derive_seed(seed, STREAM_M_GRID + i as u64))?
                .to_unlabeled()?;
            let fc = run_tap_gpps(&fit.train, &fit.validation, &target, &fit.model, &config.tap)?;
            let r = report(&fc.model, &test, &fc.thresholds)?;
            let abs_error = fc
                .pi_tgt
                .iter()
                .zip(&config.target_prevalence)
                .map(|(e, t)| (e - t).abs())
                .sum::<f64>()
                / fc.pi_tgt.len() as f64;
            rows.push(LearningRow {
                seed,
                m,
                pi_tgt: fc.pi_tgt.clone(),
                abs_error,
                gap_dp: r.gap_dp,
                accuracy: r.accuracy,
                infeasible: fc.infeasible,
            });
        }
    }
    let summary: Vec<LearningSummary> = config
        .m_grid
        .iter()
        .map(|&m| {
            let of: Vec<&LearningRow> = rows.iter().filter(|r| r.m == m).collect();
            let col = |f: &dyn Fn(&LearningRow) -> f64| MeanStd::of(&of.iter().map(|r| f(r)).collect::<Vec<_>>());
            LearningSummary {
                m,
                abs_error: col(&|r| r.abs_error),
                gap_dp: col(&|r| r.gap_dp),
                accuracy: col(&|r| r.accuracy),
            }
        })
        .collect();
    let ms: Vec<f64> = summary.iter().map(|s| s.m as f64).collect();
    let errs: Vec<f64> = summary.iter().map(|s| s.abs_error.mean).collect();
    Ok(LearningResult {
        error_slope: log_log_slope(&ms, &errs),
        rows,
        summary,
    })
}

// ---------------------------------------------------------------------------
// single run

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TapRun {
    pub seed: u64,
    pub classifier: FairClassifier<f64>,
    pub target_test: GapReport<f64>,
    pub source_only_test: GapReport<f64>,
    pub risk_unimodal: bool,
}

pub fn tap_single(config: &ExperimentConfig, seed: u64) -> CliResult<TapRun> {
    let sampler = Sampler::from_config(config)?;
    let fit = fit_source(config, &sampler, seed)?;
    let target = sampler
        .draw(&config.target_prevalence, config.m, derive_seed(seed, STREAM_TARGET))?
        .to_unlabeled()?;
    let test = sampler.draw(
        &config.target_prevalence,
        config.target_test,
        derive_seed(seed, STREAM_TARGET_TEST),
    )?;
    let classifier = run_tap_gpps(&fit.train, &fit.validation, &target, &fit.model, &config.tap)?;
    Ok(TapRun {
        seed,
        target_test: report(&classifier.model, &test, &classifier.thresholds)?,
        source_only_test: report(&fit.model, &test, &fixed_rule(config)?)?,
        risk_unimodal: classifier.risk_is_unimodal(),
        classifier,
    })
}

/// Source and labeled target samples written by `gen-data`.
pub fn generate_pair(config: &ExperimentConfig, seed: u64) -> CliResult<(LabeledDataset64, LabeledDataset64)> {
    let sampler = Sampler::from_config(config)?;
    let source = sampler.draw(&config.source_prevalence, config.n, derive_seed(seed, STREAM_SOURCE))?;
    let target = sampler.draw(&config.target_prevalence, config.m, derive_seed(seed, STREAM_TARGET))?;
    Ok((source, target.with_domain(gpps_core::DomainTag::Target)))
}

