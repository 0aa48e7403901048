//! Property suite behind `gpps check`.
//!
//! Hard checks are exact identities or tight statistical gates and fail the
//! command; soft checks are recorded in the report only.

use gpps_core::data::generate_gaussian;
use gpps_core::drift::{
    dp_impossibility_check, predict_acceptance_rate, predict_dp_gap, predict_ppv, ImpossibilityCase, RatePoint,
    DEFAULT_VERDICT_TOLERANCE,
};
use gpps_core::metrics::{acceptance_rate, confusion_rates, gap_report, group_roc, ppv};
use gpps_core::models::gaussian_bayes_posterior;
use gpps_core::rng::{derive_seed, stream, Rng};
use gpps_core::scalar::logit;
use gpps_core::shift::{correct_posterior, correction_weights, corrected_score_model, em_prevalence, EstimatorConfig};
use gpps_core::tapgpps::{
    dp_gap_bound, empirical_ar_curve, estimate_target_prevalence, label_free_risk, run_tap_gpps, threshold_for_ar,
    BoundInputs, TapConfig,
};
use gpps_core::{
    empirical_prevalence, GaussianParams64, GroupId, Grouped, PrevalenceTable64, ScoreModel64, ThresholdRule64,
};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::CliResult;
use crate::stats::mean;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub hard: bool,
    pub passed: bool,
    pub value: Option<f64>,
    pub limit: Option<f64>,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, hard: bool, passed: bool, value: Option<f64>, limit: Option<f64>, detail: String) -> Self {
        Self {
            name: name.to_string(),
            hard,
            passed,
            value,
            limit,
            detail,
        }
    }

    /// `value <= limit`.
    fn at_most(name: &str, hard: bool, value: f64, limit: f64, detail: String) -> Self {
        Self::new(name, hard, value <= limit, Some(value), Some(limit), detail)
    }

    fn failed(name: &str, hard: bool, detail: String) -> Self {
        Self::new(name, hard, false, None, None, detail)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckReport {
    pub seed: u64,
    pub outcomes: Vec<CheckOutcome>,
    pub hard_failures: usize,
    pub soft_failures: usize,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.hard_failures == 0
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.outcomes.iter().find(|o| o.name == name)
    }
}

fn params_of(config: &ExperimentConfig) -> GaussianParams64 {
    match &config.data {
        DataSource::Gaussian { params } => params.clone(),
        DataSource::Csv { .. } => GaussianParams64::default_synthetic(),
    }
}

fn two_groups(config: &ExperimentConfig) -> bool {
    params_of(config).group_count() == 2
}

fn uniform(rng: &mut Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_rates(rng: &mut Rng) -> RatePoint<f64> {
    let fpr = uniform(rng, 0.01, 0.9);
    let tpr = uniform(rng, fpr + 0.01, 0.99);
    RatePoint { tpr, fpr }
}

/// Random two-group instances with DP enforced in the first regime.
pub fn impossibility_checks(instances: usize, seed: u64) -> Vec<CheckOutcome> {
    let mut rng = stream(seed, 10);
    let mut violated = 0usize;
    let mut misclassified = 0usize;
    let mut worst_regime1: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut done = 0usize;
    let mut zero_done = 0usize;
    let mut worst_zero: f64 = 0.0;
    let mut zero_misclassified = 0usize;
    while done < instances || zero_done < instances {
        let rates = [random_rates(&mut rng), random_rates(&mut rng)];
        let pi0 = uniform(&mut rng, 0.05, 0.95);
        let ar0 = predict_acceptance_rate(pi0, rates[0]).expect("valid");
        let pi1 = (ar0 - rates[1].fpr) / rates[1].delta();
        if !(pi1 > 0.0 && pi1 < 1.0) {
            continue;
        }
        let gap1 = predict_dp_gap(pi0, pi1, rates[0], rates[1]).expect("valid").abs();
        if done < instances {
            let p0 = uniform(&mut rng, 0.05, 0.95);
            let p1 = uniform(&mut rng, 0.05, 0.95);
            let v = dp_impossibility_check([pi0, pi1], [p0, p1], rates, DEFAULT_VERDICT_TOLERANCE).expect("valid");
            if v.residual.abs() > 1e-6 {
                let gap2 = predict_dp_gap(p0, p1, rates[0], rates[1]).expect("valid").abs();
                done += 1;
                worst_regime1 = worst_regime1.max(gap1);
                worst_identity = worst_identity.max((gap2 - v.residual.abs()).abs());
                min_gap = min_gap.min(gap2);
                if gap2 > 0.0 {
                    violated += 1;
                }
                if v.case != ImpossibilityCase::Violated {
                    misclassified += 1;
                }
            }
        }
        if zero_done < instances {
            let p0 = uniform(&mut rng, 0.05, 0.95);
            let p1 = pi1 + (p0 - pi0) * rates[0].delta() / rates[1].delta();
            if p1 > 0.0 && p1 < 1.0 && p0 != pi0 {
                zero_done += 1;
                let gap2 = predict_dp_gap(p0, p1, rates[0], rates[1]).expect("valid").abs();
                worst_zero = worst_zero.max(gap1).max(gap2);
                let v = dp_impossibility_check([pi0, pi1], [p0, p1], rates, DEFAULT_VERDICT_TOLERANCE).expect("valid");
                if v.case != ImpossibilityCase::ConstrainedShift {
                    zero_misclassified += 1;
                }
            }
        }
    }
    vec![
        CheckOutcome::new(
            "impossibility.dp_violated_after_shift",
            true,
            violated == instances && misclassified == 0 && worst_regime1 <= 1e-12 && worst_identity <= 1e-12,
            Some(violated as f64 / instances as f64),
            Some(1.0),
            format!(
                "{violated}/{instances} instances with DP in regime 1 violate DP in regime 2; \
                 min regime-2 gap {min_gap:.3e}; max regime-1 gap {worst_regime1:.1e}; \
                 |gap - |residual|| <= {worst_identity:.1e}; {misclassified} verdicts not 'violated'"
            ),
        ),
        CheckOutcome::new(
            "impossibility.constrained_shift_preserves_dp",
            true,
            worst_zero <= 1e-12 && zero_misclassified == 0,
            Some(worst_zero),
            Some(1e-12),
            format!("{zero_done} zero-residual instances; {zero_misclassified} verdicts not 'constrained-shift'"),
        ),
    ]
}

pub fn drift_identity_checks(seed: u64) -> Vec<CheckOutcome> {
    let mut rng = stream(seed, 11);
    let mut worst_affine: f64 = 0.0;
    let mut ppv_drops = 0usize;
    for _ in 0..200 {
        let r = random_rates(&mut rng);
        let h = 1e-3;
        let mut last = 0.0;
        for i in 1..999 {
            let pi = i as f64 * h;
            let f = |p: f64| predict_acceptance_rate(p, r).expect("valid");
            worst_affine = worst_affine.max((f(pi + h) - 2.0 * f(pi) + f(pi - h)).abs());
            let p = predict_ppv(pi, r).expect("fpr > 0");
            if p < last - 1e-15 {
                ppv_drops += 1;
            }
            last = p;
        }
    }
    vec![
        CheckOutcome::at_most(
            "drift.acceptance_rate_affine",
            true,
            worst_affine,
            1e-14,
            "largest second finite difference of the predicted acceptance rate over 200 random rate pairs".into(),
        ),
        CheckOutcome::at_most(
            "drift.ppv_nondecreasing",
            true,
            ppv_drops as f64,
            0.0,
            "decreases of predicted PPV along dense prevalence grids".into(),
        ),
    ]
}

/// Empirical acceptance and PPV against their closed forms at empirical prevalence.
pub fn metric_identity_checks(config: &ExperimentConfig, seed: u64) -> CliResult<Vec<CheckOutcome>> {
    let params = params_of(config);
    let k = params.group_count();
    let mut rng = stream(seed, 12);
    let mut worst_ar: f64 = 0.0;
    let mut worst_ppv: f64 = 0.0;
    for trial in 0..20 {
        let pi: Vec<f64> = (0..k).map(|_| uniform(&mut rng, 0.1, 0.9)).collect();
        let data = generate_gaussian(&params, &PrevalenceTable64::new(pi)?, 997, derive_seed(seed, 100 + trial))?;
        let scores: Vec<f64> = (0..data.len()).map(|_| rng.random::<f64>()).collect();
        let rule = ThresholdRule64::new((0..k).map(|_| uniform(&mut rng, 0.1, 0.9)).collect())?;
        let rates = confusion_rates(&scores, &data, &rule)?;
        let ar = acceptance_rate(&scores, &data, &rule)?;
        let pv = ppv(&scores, &data, &rule)?;
        let pi_hat = empirical_prevalence(&data)?;
        for a in 0..k {
            let r = RatePoint::new(rates.tpr[a], rates.fpr[a])?;
            worst_ar = worst_ar.max((ar[a] - predict_acceptance_rate(pi_hat.get(a), r)?).abs());
            if let (Some(e), Ok(p)) = (pv[a], predict_ppv(pi_hat.get(a), r)) {
                worst_ppv = worst_ppv.max((e - p).abs());
            }
        }
    }
    Ok(vec![
        CheckOutcome::at_most(
            "metrics.acceptance_rate_identity",
            true,
            worst_ar,
            1e-12,
            "empirical AR vs pi*TPR + (1-pi)*FPR at empirical rates".into(),
        ),
        CheckOutcome::at_most(
            "metrics.ppv_identity",
            true,
            worst_ppv,
            1e-12,
            "empirical PPV vs pi*TPR / AR at empirical rates".into(),
        ),
    ])
}

/// Groupwise TPR/FPR/AUC stability between two prevalence regimes.
pub fn invariance_checks(config: &ExperimentConfig, seed: u64) -> CliResult<Vec<CheckOutcome>> {
    let params = params_of(config);
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let n = 20_000;
    let src = generate_gaussian(&params, &config.source_table(), n, derive_seed(seed, 20))?;
    let tgt = generate_gaussian(&params, &config.target_table(), n, derive_seed(seed, 21))?;
    let (ss, ts) = (model.score_rows(&src), model.score_rows(&tgt));
    let mut worst_rate: f64 = 0.0;
    for t in [0.2, 0.35, 0.5, 0.65, 0.8] {
        let rule = ThresholdRule64::uniform(t, params.group_count())?;
        let a = confusion_rates(&ss, &src, &rule)?;
        let b = confusion_rates(&ts, &tgt, &rule)?;
        for g in 0..a.group_count() {
            worst_rate = worst_rate.max((a.tpr[g] - b.tpr[g]).abs()).max((a.fpr[g] - b.fpr[g]).abs());
        }
    }
    let ra = group_roc(&ss, &src)?;
    let rb = group_roc(&ts, &tgt)?;
    let worst_auc = ra.iter().zip(&rb).map(|(a, b)| (a.auc - b.auc).abs()).fold(0.0, f64::max);
    let rule = ThresholdRule64::new(config.thresholds.clone())?;
    let eo_shift = (gap_report(&ss, &src, &rule)?.gap_eo - gap_report(&ts, &tgt, &rule)?.gap_eo).abs();
    Ok(vec![
        CheckOutcome::at_most(
            "metrics.rates_invariant_under_shift",
            true,
            worst_rate,
            0.02,
            format!("max groupwise |dTPR|, |dFPR| between source and target at 5 thresholds, n={n}/group"),
        ),
        CheckOutcome::at_most("metrics.auc_invariant_under_shift", true, worst_auc, 0.01, "max groupwise |dAUC|".into()),
        CheckOutcome::at_most("metrics.eo_gap_transfers", true, eo_shift, 0.03, "|EO gap(src) - EO gap(tgt)|".into()),
    ])
}

/// Corrected Gaussian posterior vs the posterior built at the target prevalence.
pub fn correction_checks(config: &ExperimentConfig, seed: u64) -> CliResult<Vec<CheckOutcome>> {
    let params = params_of(config);
    let k = params.group_count();
    let d = params.dim();
    let mut rng = stream(seed, 13);
    let mut worst: f64 = 0.0;
    let mut worst_log_odds: f64 = 0.0;
    let mut worst_round_trip: f64 = 0.0;
    let pairs = config.check.correction_pairs;
    let points = config.check.correction_points;
    for _ in 0..pairs {
        let src = PrevalenceTable64::new((0..k).map(|_| uniform(&mut rng, 0.05, 0.95)).collect())?;
        let tgt = PrevalenceTable64::new((0..k).map(|_| uniform(&mut rng, 0.05, 0.95)).collect())?;
        let base = gaussian_bayes_posterior(&params, &src)?;
        let direct = gaussian_bayes_posterior(&params, &tgt)?;
        let corrected = corrected_score_model(&base, &src, &tgt)?;
        let w = correction_weights(&src, &tgt)?;
        let back = correction_weights(&tgt, &src)?;
        for _ in 0..points {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal) + 0.8).collect();
            let g = GroupId(rng.random_range(0..k));
            let p = base.score(&x, g);
            let c = corrected.score(&x, g);
            worst = worst.max((c - direct.score(&x, g)).abs());
            if p > 1e-3 && p < 1.0 - 1e-3 && c > 1e-3 && c < 1.0 - 1e-3 {
                let (w1, w0) = w.group(g.0);
                worst_log_odds = worst_log_odds.max((logit(c) - logit(p) - (w1 / w0).ln()).abs());
            }
        }
        for i in 0..=998 {
            let p = 0.001 + i as f64 * 0.001;
            for a in 0..k {
                let (w1, w0) = w.group(a);
                let (b1, b0) = back.group(a);
                let rt = correct_posterior(correct_posterior(p, w1, w0), b1, b0);
                worst_round_trip = worst_round_trip.max((rt - p).abs());
            }
        }
    }
    Ok(vec![
        CheckOutcome::at_most(
            "shift.correction_matches_target_posterior",
            true,
            worst,
            1e-10,
            format!("{points} points x {pairs} prevalence pairs"),
        ),
        CheckOutcome::at_most(
            "shift.correction_round_trip",
            true,
            worst_round_trip,
            1e-12,
            "src -> tgt -> src on p in [0.001, 0.999]".into(),
        ),
        CheckOutcome::at_most(
            "shift.correction_is_log_odds_shift",
            true,
            worst_log_odds,
            1e-10,
            "logit(corrected) - logit(p) - ln(w1/w0) where both lie in [0.001, 0.999]".into(),
        ),
    ])
}

/// Threshold search on random empirical acceptance curves.
pub fn bisection_checks(config: &ExperimentConfig, seed: u64) -> CliResult<Vec<CheckOutcome>> {
    let m = config.check.bisection_rows;
    let curves = config.check.bisection_curves;
    let tap = TapConfig::<f64> {
        epsilon: 1e-4,
        ..config.tap.clone()
    };
    let mut rng = stream(seed, 14);
    let mut worst_err: f64 = 0.0;
    let mut worst_iter = 0usize;
    let mut worst_pair: f64 = 0.0;
    let mut previous: Option<gpps_core::tapgpps::ArCurve<f64>> = None;
    for _ in 0..curves {
        let (mu, s) = (uniform(&mut rng, -2.0, 2.0), uniform(&mut rng, 0.3, 3.0));
        let scores: Vec<f64> = (0..m)
            .map(|_| gpps_core::scalar::sigmoid(mu + s * rng.sample::<f64, _>(StandardNormal)))
            .collect();
        let curve = empirical_ar_curve(&scores)?;
        for &gamma in &tap.gammas {
            let c = threshold_for_ar(&curve, gamma, &tap)?;
            worst_err = worst_err.max((c.achieved - gamma).abs());
            worst_iter = worst_iter.max(c.iterations);
            if let Some(prev) = &previous {
                let other = threshold_for_ar(prev, gamma, &tap)?;
                worst_pair = worst_pair.max((c.achieved - other.achieved).abs());
            }
        }
        previous = Some(curve);
    }
    let limit = 1.0 / m as f64 + 1e-4;
    Ok(vec![
        CheckOutcome::new(
            "tapgpps.bisection_contract",
            true,
            worst_err <= limit && worst_iter <= 14,
            Some(worst_err),
            Some(limit),
            format!("{curves} curves of {m} rows; max |AR - gamma| {worst_err:.2e}; max iterations {worst_iter}"),
        ),
        CheckOutcome::at_most(
            "tapgpps.dp_feasibility",
            true,
            worst_pair,
            2.0 / m as f64 + 2.0 * tap.epsilon,
            "pairwise gap of achieved acceptance rates at a common gamma".into(),
        ),
    ])
}

/// Label-free risk vs labeled target risk for random threshold rules.
pub fn risk_fidelity(config: &ExperimentConfig, seed: u64) -> CliResult<CheckOutcome> {
    let params = params_of(config);
    let k = params.group_count();
    let n = config.check.risk_samples;
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let source = generate_gaussian(&params, &config.source_table(), n, derive_seed(seed, 30))?;
    let target = generate_gaussian(&params, &config.target_table(), n, derive_seed(seed, 31))?;
    let unlabeled = target.to_unlabeled()?;
    let est = estimate_target_prevalence(&source, &source, &unlabeled, &model, &EstimatorConfig::default())?;
    let (ss, ts) = (model.score_rows(&source), model.score_rows(&target));
    let mut rng = stream(seed, 15);
    let mut worst: f64 = 0.0;
    for _ in 0..config.check.risk_rules {
        let rule = ThresholdRule64::new((0..k).map(|_| uniform(&mut rng, 0.05, 0.95)).collect())?;
        let rates = confusion_rates(&ss, &source, &rule)?;
        let estimated = label_free_risk(&rates, &est.pi_tgt)?;
        let actual = gap_report(&ts, &target, &rule)?.risk;
        worst = worst.max((estimated - actual).abs());
    }
    Ok(CheckOutcome::at_most(
        "tapgpps.label_free_risk_fidelity",
        true,
        worst,
        0.02,
        format!("{} random rules, n=m={n}/group, EM prevalence estimates", config.check.risk_rules),
    ))
}

/// Analytic TPR/FPR of a thresholded Gaussian-Bayes posterior.
pub fn analytic_rates(
    params: &GaussianParams64,
    model: &ScoreModel64,
    rule: &ThresholdRule64,
) -> CliResult<Vec<RatePoint<f64>>> {
    let ScoreModel64::GaussianBayes { slopes, intercepts, .. } = model else {
        return Err(gpps_core::GppsError::InvalidInput("analytic rates need a gaussian-bayes model".into()).into());
    };
    let d = params.dim();
    let cov = params.covariance();
    let normal = Normal::standard();
    let tail = |z: f64| {
        if z == f64::NEG_INFINITY {
            1.0
        } else if z == f64::INFINITY {
            0.0
        } else {
            1.0 - normal.cdf(z)
        }
    };
    (0..params.group_count())
        .map(|a| {
            let w = &slopes[a];
            let var: f64 = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| w[i] * cov[i * d + j] * w[j]).sum();
            let sd = var.sqrt();
            let cut = logit(rule.get(a)) - intercepts[a];
            let mean = |label| w.iter().zip(params.mean(a, label)).map(|(p, q)| p * q).sum::<f64>();
            Ok(RatePoint::new(tail((cut - mean(true)) / sd), tail((cut - mean(false)) / sd))?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundCoverage {
    pub trials: usize,
    pub exceedances: usize,
    pub rate: f64,
    pub bound: f64,
    pub kappa: f64,
    pub mean_error: f64,
    pub max_error: f64,
}

/// Repeated label-free DP-gap estimates against the exact target gap of an
/// oracle classifier at the fixed thresholds.
pub fn bound_coverage(config: &ExperimentConfig, seed: u64) -> CliResult<BoundCoverage> {
    let params = params_of(config);
    let k = params.group_count();
    let c = &config.check;
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let rule = ThresholdRule64::new(config.thresholds.clone())?;
    let exact = analytic_rates(&params, &model, &rule)?;
    let kappa = match c.bound_kappa {
        Some(v) => v,
        None => exact.iter().map(|r| r.delta()).fold(f64::INFINITY, f64::min),
    };
    let n = c.bound_samples;
    let inputs = BoundInputs {
        source_counts: vec![n; k],
        target_counts: vec![n; k],
        kappa,
        confidence: c.bound_confidence,
        c1: c.bound_c1,
        c2: c.bound_c2,
    };
    let bound = dp_gap_bound(&inputs, k)?;
    let true_ar: Vec<f64> = (0..k)
        .map(|a| predict_acceptance_rate(config.target_prevalence[a], exact[a]))
        .collect::<Result<_, _>>()?;
    let true_gap = gpps_core::metrics::dp_gap(&true_ar);
    let mut errors = Vec::with_capacity(c.bound_trials);
    for t in 0..c.bound_trials as u64 {
        let source = generate_gaussian(&params, &config.source_table(), n, derive_seed(seed, 40_000 + 2 * t))?;
        let target = generate_gaussian(&params, &config.target_table(), n, derive_seed(seed, 40_001 + 2 * t))?
            .to_unlabeled()?;
        let est = estimate_target_prevalence(&source, &source, &target, &model, &config.tap.estimator)?;
        let rates = confusion_rates(&model.score_rows(&source), &source, &rule)?;
        let ar: Vec<f64> = (0..k)
            .map(|a| {
                let p = est.pi_tgt.get(a);
                p * rates.tpr[a] + (1.0 - p) * rates.fpr[a]
            })
            .collect();
        errors.push((gpps_core::metrics::dp_gap(&ar) - true_gap).abs());
    }
    let exceedances = errors.iter().filter(|e| **e > bound).count();
    Ok(BoundCoverage {
        trials: errors.len(),
        exceedances,
        rate: exceedances as f64 / errors.len().max(1) as f64,
        bound,
        kappa,
        mean_error: mean(&errors),
        max_error: errors.iter().copied().fold(0.0, f64::max),
    })
}

fn bound_outcome(config: &ExperimentConfig, seed: u64) -> CheckOutcome {
    match bound_coverage(config, seed) {
        Ok(b) => CheckOutcome::at_most(
            "tapgpps.bound_coverage",
            false,
            b.rate,
            config.check.bound_max_exceedance,
            format!(
                "{}/{} trials exceed the bound {:.4} (kappa {:.4}); mean error {:.4}, max {:.4}",
                b.exceedances, b.trials, b.bound, b.kappa, b.mean_error, b.max_error
            ),
        ),
        // an unusable bound configuration (e.g. kappa <= 0) is an error, not a soft miss
        Err(e) => CheckOutcome::failed("tapgpps.bound_inputs", true, e.to_string()),
    }
}

/// EM step sizes on oracle posteriors never grow after the second iteration.
pub fn em_contraction(config: &ExperimentConfig, seed: u64) -> CliResult<CheckOutcome> {
    let params = params_of(config);
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let target = generate_gaussian(&params, &config.target_table(), 5000, derive_seed(seed, 50))?;
    let scores = model.score_rows(&target);
    let mut growths = 0usize;
    for (a, rows) in target.group_indices().iter().enumerate() {
        let s: Vec<f64> = rows.iter().map(|&i| scores[i]).collect();
        let est = em_prevalence(&s, config.source_prevalence[a], &config.tap.estimator)?;
        growths += est.steps.windows(2).skip(1).filter(|w| w[1] > w[0] + 1e-15).count();
    }
    Ok(CheckOutcome::at_most(
        "shift.em_contraction",
        false,
        growths as f64,
        0.0,
        "EM steps that grew after iteration 2".into(),
    ))
}

/// BBSE mean absolute error should roughly halve when m quadruples.
pub fn bbse_scaling(config: &ExperimentConfig, seed: u64) -> CliResult<CheckOutcome> {
    let params = params_of(config);
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let source = generate_gaussian(&params, &config.source_table(), 20_000, derive_seed(seed, 60))?;
    let bbse = EstimatorConfig::bbse();
    let err = |m: usize| -> CliResult<f64> {
        let mut e = Vec::new();
        for s in 0..20u64 {
            let target = generate_gaussian(&params, &config.target_table(), m, derive_seed(seed, 61 + s * 8 + m as u64))?
                .to_unlabeled()?;
            let est = estimate_target_prevalence(&source, &source, &target, &model, &bbse)?;
            e.extend(est.pi_tgt.prevalences().iter().zip(&config.target_prevalence).map(|(p, t)| (p - t).abs()));
        }
        Ok(mean(&e))
    };
    let (small, large) = (err(500)?, err(2000)?);
    let ratio = small / large;
    Ok(CheckOutcome::new(
        "shift.bbse_error_scaling",
        false,
        (1.3..=2.7).contains(&ratio),
        Some(ratio),
        Some(2.0),
        format!("mean |pi_hat - pi| {small:.4} at m=500 vs {large:.4} at m=2000"),
    ))
}

/// Estimated risk along the gamma grid is unimodal on the Gaussian setting.
pub fn gamma_unimodality(config: &ExperimentConfig, seed: u64) -> CliResult<CheckOutcome> {
    let params = params_of(config);
    let model = gaussian_bayes_posterior(&params, &config.source_table())?;
    let train = generate_gaussian(&params, &config.source_table(), 5000, derive_seed(seed, 70))?;
    let val = generate_gaussian(&params, &config.source_table(), 5000, derive_seed(seed, 71))?;
    let target = generate_gaussian(&params, &config.target_table(), 5000, derive_seed(seed, 72))?.to_unlabeled()?;
    let fc = run_tap_gpps(&train, &val, &target, &model, &config.tap)?;
    Ok(CheckOutcome::new(
        "tapgpps.risk_unimodal_in_gamma",
        false,
        fc.risk_is_unimodal(),
        None,
        None,
        format!("selected gamma {:.2}, estimated risk {:.4}", fc.gamma, fc.estimated_risk),
    ))
}

fn collect(out: &mut Vec<CheckOutcome>, name: &str, hard: bool, r: CliResult<Vec<CheckOutcome>>) {
    match r {
        Ok(v) => out.extend(v),
        Err(e) => out.push(CheckOutcome::failed(name, hard, e.to_string())),
    }
}

pub fn run_checks(config: &ExperimentConfig, seed: u64) -> CheckReport {
    let mut outcomes = Vec::new();
    if two_groups(config) {
        outcomes.extend(impossibility_checks(config.check.impossibility_instances, seed));
    }
    outcomes.extend(drift_identity_checks(seed));
    collect(&mut outcomes, "metrics.identities", true, metric_identity_checks(config, seed));
    collect(&mut outcomes, "metrics.invariance", true, invariance_checks(config, seed));
    collect(&mut outcomes, "shift.correction", true, correction_checks(config, seed));
    collect(&mut outcomes, "tapgpps.bisection", true, bisection_checks(config, seed));
    collect(&mut outcomes, "tapgpps.label_free_risk_fidelity", true, risk_fidelity(config, seed).map(|o| vec![o]));
    outcomes.push(bound_outcome(config, seed));
    collect(&mut outcomes, "shift.em_contraction", false, em_contraction(config, seed).map(|o| vec![o]));
    collect(&mut outcomes, "shift.bbse_error_scaling", false, bbse_scaling(config, seed).map(|o| vec![o]));
    collect(&mut outcomes, "tapgpps.risk_unimodal_in_gamma", false, gamma_unimodality(config, seed).map(|o| vec![o]));
    let hard_failures = outcomes.iter().filter(|o| o.hard && !o.passed).count();
    let soft_failures = outcomes.iter().filter(|o| !o.hard && !o.passed).count();
    CheckReport {
        seed,
        outcomes,
        hard_failures,
        soft_failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_rates_match_simulation() {
        let params = GaussianParams64::default_synthetic();
        let pi = PrevalenceTable64::new(vec![0.3, 0.5]).unwrap();
        let model = gaussian_bayes_posterior(&params, &pi).unwrap();
        let rule = ThresholdRule64::new(vec![0.5, 0.4]).unwrap();
        let exact = analytic_rates(&params, &model, &rule).unwrap();
        let data = generate_gaussian(&params, &pi, 40_000, 9).unwrap();
        let emp = confusion_rates(&model.score_rows(&data), &data, &rule).unwrap();
        for a in 0..2 {
            assert!((exact[a].tpr - emp.tpr[a]).abs() < 0.01);
            assert!((exact[a].fpr - emp.fpr[a]).abs() < 0.01);
        }
        let all = ThresholdRule64::new(vec![0.0, 1.0]).unwrap();
        let r = analytic_rates(&params, &model, &all).unwrap();
        assert_eq!((r[0].tpr, r[0].fpr, r[1].tpr, r[1].fpr), (1.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn impossibility_suite_passes_on_small_runs() {
        for o in impossibility_checks(50, 3) {
            assert!(o.passed, "{o:?}");
        }
    }

    #[test]
    fn zero_kappa_is_a_hard_failure() {
        let mut c = ExperimentConfig::default();
        c.check.bound_kappa = Some(0.0);
        c.check.bound_trials = 1;
        let o = bound_outcome(&c, 0);
        assert!(o.hard && !o.passed, "{o:?}");
    }
}
