//! Target-aware post-processing: estimate target prevalences from unlabeled
//! rows, correct the posterior, and pick per-group thresholds that equalize
//! target acceptance rates while minimizing a label-free risk estimate.

use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::metrics::{confusion_rates, dp_gap, GroupRates};
use crate::models::ScoreModel;
use crate::scalar::Scalar;
use crate::shift::{
    bbse_prevalence, corrected_score_model, em_prevalence, BbseEstimate, EmEstimate, EstimatorConfig,
    EstimatorMethod,
};
use crate::types::{
    empirical_prevalence, FeatureRows, GroupId, Grouped, LabeledDataset, PrevalenceTable, ThresholdRule,
    UnlabeledDataset,
};

/// Gap between two estimated risks treated as a tie.
pub const RISK_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default)]
pub struct TapConfig<T> {
    /// DP tolerance.
    pub delta: T,
    /// Candidate acceptance rates, ascending.
    pub gammas: Vec<T>,
    /// Bisection resolution on the threshold axis.
    pub epsilon: T,
    pub max_bisection_iterations: usize,
    pub estimator: EstimatorConfig,
}

impl<T: Scalar> Default for TapConfig<T> {
    fn default() -> Self {
        Self {
            delta: T::lit(0.05),
            gammas: gamma_grid(T::lit(0.01), T::lit(0.99), 101),
            epsilon: T::lit(1e-4),
            max_bisection_iterations: 60,
            estimator: EstimatorConfig::default(),
        }
    }
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn gamma_grid<T: Scalar>(lo: T, hi: T, count: usize) -> Vec<T> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let step = (hi - lo) / T::from_count(count - 1);
            (0..count)
                .map(|i| if i + 1 == count { hi } else { lo + step * T::from_count(i) })
                .collect()
        }
    }
}

impl<T: Scalar> TapConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(GppsError::invalid("delta must lie in (0, 1)"));
        }
        if self.gammas.is_empty() {
            return Err(GppsError::invalid("gamma grid is empty"));
        }
        if self.gammas.iter().any(|g| !(*g > T::zero() && *g < T::one())) {
            return Err(GppsError::invalid("gamma grid must lie inside (0, 1)"));
        }
        if self.gammas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GppsError::invalid("gamma grid must be sorted and distinct"));
        }
        if !(self.epsilon > T::zero() && self.epsilon < T::one()) {
            return Err(GppsError::invalid("epsilon must lie in (0, 1)"));
        }
        if self.max_bisection_iterations == 0 {
            return Err(GppsError::invalid("max_bisection_iterations must be positive"));
        }
        self.estimator.validate()
    }

    /// `min(ceil(log2(1 / epsilon)), max_bisection_iterations)`.
    pub fn bisection_iterations(&self) -> usize {
        let n = (T::one() / self.epsilon).log2().ceil().as_f64().max(0.0) as usize;
        n.min(self.max_bisection_iterations)
    }
}

/// Empirical acceptance rate `t -> #{s >= t} / m` of one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ArCurve<T> {
    /// Distinct scores, decreasing.
    levels: Vec<T>,
    /// `counts[i]` rows score at least `levels[i]`.
    counts: Vec<usize>,
    total: usize,
}

impl<T: Scalar> ArCurve<T> {
    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Rows accepted at threshold `t`.
    pub fn accepted(&self, t: T) -> usize {
        match self.levels.partition_point(|s| *s >= t) {
            0 => 0,
            i => self.counts[i - 1],
        }
    }

    pub fn at(&self, t: T) -> T {
        T::ratio(self.accepted(t), self.total)
    }

    /// Acceptance after keeping the top `level + 1` distinct scores; `None` keeps nothing.
    fn level_count(&self, level: Option<usize>) -> usize {
        level.map_or(0, |i| self.counts[i])
    }

    /// Threshold accepting exactly the top `level + 1` distinct scores: the
    /// midpoint to the next lower score (or to 0 / 1 at the ends).
    fn level_threshold(&self, level: Option<usize>) -> T {
        let (upper, lower) = match level {
            None => (T::one(), self.levels[0]),
            Some(i) => (self.levels[i], self.levels.get(i + 1).copied().unwrap_or(T::zero())),
        };
        let mid = (upper + lower) * T::half();
        if mid > lower || (level.is_some() && lower == upper) {
            mid
        } else {
            upper
        }
    }
}

pub fn empirical_ar_curve<T: Scalar>(scores: &[T]) -> Result<ArCurve<T>> {
    if scores.is_empty() {
        return Err(GppsError::invalid("acceptance curve of an empty group"));
    }
    if scores.iter().any(|s| !(*s >= T::zero() && *s <= T::one())) {
        return Err(GppsError::invalid("scores must lie in [0, 1]"));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite scores"));
    let mut levels: Vec<T> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (i, s) in sorted.iter().enumerate() {
        if levels.last() == Some(s) {
            *counts.last_mut().expect("non-empty") = i + 1;
        } else {
            levels.push(*s);
            counts.push(i + 1);
        }
    }
    Ok(ArCurve {
        levels,
        counts,
        total: scores.len(),
    })
}

/// Per-group empirical acceptance curves of `scores` over the rows of `data`.
pub fn group_ar_curves<T: Scalar, D: Grouped>(scores: &[T], data: &D) -> Result<Vec<ArCurve<T>>> {
    if scores.len() != data.len() {
        return Err(GppsError::invalid("scores and rows differ in length"));
    }
    data.group_indices()
        .iter()
        .enumerate()
        .map(|(group, rows)| {
            if rows.is_empty() {
                return Err(GppsError::EmptyGroup { group });
            }
            empirical_ar_curve(&rows.iter().map(|&i| scores[i]).collect::<Vec<_>>())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ThresholdChoice<T> {
    pub threshold: T,
    /// Empirical acceptance rate at `threshold`.
    pub achieved: T,
    pub iterations: usize,
}

/// Threshold whose empirical acceptance rate is closest to `gamma`.
///
/// Bisection on `[0, 1]` keeps `AR(lo) >= gamma > AR(hi)`; the returned
/// threshold is then snapped to a midpoint between adjacent distinct scores
/// inside the final bracket. Equally close candidates resolve to the larger
/// acceptance rate.
pub fn threshold_for_ar<T: Scalar>(curve: &ArCurve<T>, gamma: T, config: &TapConfig<T>) -> Result<ThresholdChoice<T>> {
    let ceiling = curve.at(T::zero());
    if !(gamma >= T::zero()) || gamma > ceiling {
        return Err(GppsError::Infeasible {
            gamma: gamma.as_f64(),
            max: ceiling.as_f64(),
        });
    }
    let (mut lo, mut hi) = (T::zero(), T::one());
    let mut iterations = 0;
    if curve.at(hi) < gamma {
        for _ in 0..config.bisection_iterations() {
            iterations += 1;
            let mid = (lo + hi) * T::half();
            if curve.at(mid) >= gamma {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    } else {
        lo = hi;
    }

    // Candidate levels: every distinct score in [lo, hi) plus the level just above hi.
    let above_hi = curve.levels.partition_point(|s| *s >= hi);
    let through_lo = curve.levels.partition_point(|s| *s >= lo);
    let first = above_hi.checked_sub(1);
    let last = through_lo.checked_sub(1);
    let target = gamma * T::from_count(curve.total);
    let mut best = first;
    let mut best_err = (T::from_count(curve.level_count(first)) - target).abs();
    if first.is_none() && curve.levels[0] >= T::one() {
        best_err = T::infinity();
    }
    let start = first.map_or(0, |i| i + 1);
    if let Some(last) = last {
        for i in start..=last {
            let err = (T::from_count(curve.counts[i]) - target).abs();
            if err <= best_err {
                best = Some(i);
                best_err = err;
            }
        }
    }
    let threshold = curve.level_threshold(best).max(T::zero()).min(T::one());
    Ok(ThresholdChoice {
        threshold,
        achieved: curve.at(threshold),
        iterations,
    })
}

/// `sum_a P(A=a) [pi_a (1 - tpr_a) + (1 - pi_a) fpr_a]`.
pub fn label_free_risk<T: Scalar>(rates: &GroupRates<T>, pi_tgt: &PrevalenceTable<T>) -> Result<T> {
    let marginals = pi_tgt
        .marginals()
        .ok_or_else(|| GppsError::invalid("label-free risk needs group marginals"))?;
    if rates.group_count() != pi_tgt.group_count() {
        return Err(GppsError::invalid("rates and prevalence table differ in group count"));
    }
    Ok(crate::scalar::stable_sum((0..rates.group_count()).map(|a| {
        let pi = pi_tgt.get(a);
        marginals[a] * (pi * (T::one() - rates.tpr[a]) + (T::one() - pi) * rates.fpr[a])
    })))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase", bound = "T: Scalar")]
pub enum GroupEstimate<T> {
    Em(EmEstimate<T>),
    Bbse(BbseEstimate<T>),
}

impl<T: Scalar> GroupEstimate<T> {
    pub fn estimate(&self) -> T {
        match self {
            GroupEstimate::Em(e) => e.estimate,
            GroupEstimate::Bbse(e) => e.estimate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrevalenceEstimate<T> {
    /// Training-split prevalences.
    pub pi_src: PrevalenceTable<T>,
    /// Estimated target prevalences, with target group marginals.
    pub pi_tgt: PrevalenceTable<T>,
    pub groups: Vec<GroupEstimate<T>>,
}

fn target_marginals<T: Scalar, D: Grouped>(data: &D) -> Vec<T> {
    data.group_sizes().iter().map(|&n| T::ratio(n, data.len())).collect()
}

fn check_groups<T: Scalar>(
    train: &LabeledDataset<T>,
    validation: &LabeledDataset<T>,
    target: &UnlabeledDataset<T>,
    model: &ScoreModel<T>,
) -> Result<usize> {
    let k = train.group_count();
    if validation.group_count() != k || target.group_count() != k || model.group_count() != k {
        return Err(GppsError::invalid(
            "training, validation, target and model must share one group count",
        ));
    }
    if let Some(group) = target.group_sizes().iter().position(|&n| n == 0) {
        return Err(GppsError::EmptyGroup { group });
    }
    Ok(k)
}

/// Source prevalences from `train` and target prevalences from the unlabeled
/// `target` rows under `model`.
pub fn estimate_target_prevalence<T: Scalar>(
    train: &LabeledDataset<T>,
    validation: &LabeledDataset<T>,
    target: &UnlabeledDataset<T>,
    model: &ScoreModel<T>,
    estimator: &EstimatorConfig,
) -> Result<PrevalenceEstimate<T>> {
    check_groups(train, validation, target, model)?;
    let pi_src = empirical_prevalence(train)?;
    let target_scores = model.score_rows(target);
    let target_rows = target.group_indices();
    let val_scores = model.score_rows(validation);
    let val_rows = validation.group_indices();
    let mut groups = Vec::with_capacity(target_rows.len());
    for (a, rows) in target_rows.iter().enumerate() {
        let tgt: Vec<T> = rows.iter().map(|&i| target_scores[i]).collect();
        let estimate = match estimator.method {
            EstimatorMethod::Em => GroupEstimate::Em(em_prevalence(&tgt, pi_src.get(a), estimator)?),
            EstimatorMethod::Bbse => {
                let scores: Vec<T> = val_rows[a].iter().map(|&i| val_scores[i]).collect();
                let labels: Vec<bool> = val_rows[a].iter().map(|&i| validation.label(i)).collect();
                GroupEstimate::Bbse(bbse_prevalence(&scores, &labels, &tgt, estimator)?)
            }
        };
        groups.push(estimate);
    }
    let pi_tgt = PrevalenceTable::with_marginals(
        groups.iter().map(GroupEstimate::estimate).collect(),
        target_marginals(target),
    )?;
    Ok(PrevalenceEstimate { pi_src, pi_tgt, groups })
}

/// Diagnostics of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GammaPoint<T> {
    pub gamma: T,
    pub thresholds: Vec<T>,
    /// Empirical target acceptance rates at `thresholds`.
    pub achieved: Vec<T>,
    pub estimated_risk: T,
    /// Max pairwise gap of `achieved`.
    pub estimated_dp_gap: T,
    /// Gap predicted from source TPR/FPR and the target prevalence estimates.
    pub predicted_dp_gap: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FairClassifier<T> {
    /// Posterior corrected to the estimated target prevalences.
    pub model: ScoreModel<T>,
    pub thresholds: ThresholdRule<T>,
    pub gamma: T,
    pub estimated_risk: T,
    pub estimated_dp_gap: T,
    pub predicted_dp_gap: T,
    pub pi_src: Vec<T>,
    pub pi_tgt: Vec<T>,
    pub target_marginals: Vec<T>,
    /// No grid point met the DP tolerance; the smallest-gap point was kept.
    pub infeasible: bool,
    pub delta: T,
    pub search: Vec<GammaPoint<T>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimates: Vec<GroupEstimate<T>>,
}

impl<T: Scalar> FairClassifier<T> {
    pub fn group_count(&self) -> usize {
        self.thresholds.group_count()
    }

    pub fn score(&self, x: &[T], group: GroupId) -> T {
        self.model.score(x, group)
    }

    pub fn predict(&self, x: &[T], group: GroupId) -> bool {
        self.thresholds.accepts(self.model.score(x, group), group)
    }

    pub fn scores<D: FeatureRows<T>>(&self, data: &D) -> Vec<T> {
        self.model.score_rows(data)
    }

    pub fn predictions<D: FeatureRows<T>>(&self, data: &D) -> Vec<bool> {
        self.scores(data)
            .iter()
            .zip(data.groups())
            .map(|(s, g)| self.thresholds.accepts(*s, *g))
            .collect()
    }

    /// Whether the estimated risk along the grid decreases then increases
    /// (plateaus allowed).
    pub fn risk_is_unimodal(&self) -> bool {
        let risks: Vec<T> = self.search.iter().map(|p| p.estimated_risk).collect();
        let tol = T::lit(RISK_TIE_TOLERANCE);
        let mut rising = false;
        for w in risks.windows(2) {
            if w[1] > w[0] + tol {
                rising = true;
            } else if rising && w[1] < w[0] - tol {
                return false;
            }
        }
        true
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn predicted_gap<T: Scalar>(rates: &GroupRates<T>, pi_tgt: &PrevalenceTable<T>) -> T {
    let ar: Vec<T> = (0..rates.group_count())
        .map(|a| {
            let pi = pi_tgt.get(a);
            pi * rates.tpr[a] + (T::one() - pi) * rates.fpr[a]
        })
        .collect();
    dp_gap(&ar)
}

/// Threshold search for fixed source and target prevalences.
///
/// For each `gamma`, every group gets the corrected-posterior threshold whose
/// empirical target acceptance rate is closest to `gamma`. TPR/FPR at those
/// thresholds come from the labeled `validation` rows; the chosen point
/// minimizes [`label_free_risk`] among points whose empirical target DP gap
/// is at most `delta`, ties going to the larger `gamma`.
pub fn select_thresholds<T: Scalar>(
    validation: &LabeledDataset<T>,
    target: &UnlabeledDataset<T>,
    model: &ScoreModel<T>,
    pi_src: &PrevalenceTable<T>,
    pi_tgt: &PrevalenceTable<T>,
    config: &TapConfig<T>,
) -> Result<FairClassifier<T>> {
    config.validate()?;
    let k = target.group_count();
    if validation.group_count() != k || model.group_count() != k {
        return Err(GppsError::invalid("validation, target and model must share one group count"));
    }
    let mut pi_tgt = pi_tgt.clone();
    if pi_tgt.marginals().is_none() {
        pi_tgt.set_marginals(target_marginals(target))?;
    }
    let corrected = corrected_score_model(model, pi_src, &pi_tgt)?;
    let curves = group_ar_curves(&corrected.score_rows(target), target)?;
    let val_scores = corrected.score_rows(validation);

    let mut search = Vec::with_capacity(config.gammas.len());
    for &gamma in &config.gammas {
        let choices = curves
            .iter()
            .map(|c| threshold_for_ar(c, gamma, config))
            .collect::<Result<Vec<_>>>()?;
        let thresholds: Vec<T> = choices.iter().map(|c| c.threshold).collect();
        let achieved: Vec<T> = choices.iter().map(|c| c.achieved).collect();
        let rates = confusion_rates(&val_scores, validation, &ThresholdRule::new(thresholds.clone())?)?;
        search.push(GammaPoint {
            gamma,
            estimated_risk: label_free_risk(&rates, &pi_tgt)?,
            estimated_dp_gap: dp_gap(&achieved),
            predicted_dp_gap: predicted_gap(&rates, &pi_tgt),
            thresholds,
            achieved,
        });
    }

    let tol = T::lit(RISK_TIE_TOLERANCE);
    let pick = |key: &dyn Fn(&GammaPoint<T>) -> T, candidates: &mut dyn Iterator<Item = usize>| {
        let mut best: Option<usize> = None;
        for i in candidates {
            let better = match best {
                None => true,
                // grid is ascending, so a tie always favours the later point
                Some(b) => key(&search[i]) <= key(&search[b]) + tol,
            };
            if better {
                best = Some(i);
            }
        }
        best
    };
    let feasible = pick(
        &|p: &GammaPoint<T>| p.estimated_risk,
        &mut (0..search.len()).filter(|&i| search[i].estimated_dp_gap <= config.delta),
    );
    let (chosen, infeasible) = match feasible {
        Some(i) => (i, false),
        None => (
            pick(&|p: &GammaPoint<T>| p.estimated_dp_gap, &mut (0..search.len())).expect("non-empty grid"),
            true,
        ),
    };
    let point = &search[chosen];
    Ok(FairClassifier {
        model: corrected,
        thresholds: ThresholdRule::new(point.thresholds.clone())?,
        gamma: point.gamma,
        estimated_risk: point.estimated_risk,
        estimated_dp_gap: point.estimated_dp_gap,
        predicted_dp_gap: point.predicted_dp_gap,
        pi_src: pi_src.prevalences().to_vec(),
        pi_tgt: pi_tgt.prevalences().to_vec(),
        target_marginals: pi_tgt.marginals().expect("set above").to_vec(),
        infeasible,
        delta: config.delta,
        search,
        estimates: Vec::new(),
    })
}

/// Full pipeline: source prevalences from `train`, target prevalences from the
/// configured estimator, posterior correction, then [`select_thresholds`].
pub fn run_tap_gpps<T: Scalar>(
    train: &LabeledDataset<T>,
    validation: &LabeledDataset<T>,
    target: &UnlabeledDataset<T>,
    model: &ScoreModel<T>,
    config: &TapConfig<T>,
) -> Result<FairClassifier<T>> {
    config.validate()?;
    let est = estimate_target_prevalence(train, validation, target, model, &config.estimator)?;
    let mut out = select_thresholds(validation, target, model, &est.pi_src, &est.pi_tgt, config)?;
    out.estimates = est.groups;
    Ok(out)
}

/// Inputs of the finite-sample DP-gap bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BoundInputs<T> {
    /// Labeled source rows per group.
    pub source_counts: Vec<usize>,
    /// Unlabeled target rows per group.
    pub target_counts: Vec<usize>,
    /// Lower bound on `tpr_a - fpr_a`.
    pub kappa: T,
    pub confidence: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Scalar> BoundInputs<T> {
    pub fn new(source_counts: Vec<usize>, target_counts: Vec<usize>, kappa: T) -> Self {
        Self {
            source_counts,
            target_counts,
            kappa,
            confidence: T::lit(0.05),
            c1: T::one(),
            c2: T::one(),
        }
    }
}

/// `sum_a (c1 / (kappa sqrt(m_a)) + c2 / sqrt(n_a)) * sqrt(ln(|A| / confidence))`.
pub fn dp_gap_bound<T: Scalar>(inputs: &BoundInputs<T>, group_count: usize) -> Result<T> {
    if group_count == 0 || inputs.source_counts.len() != group_count || inputs.target_counts.len() != group_count {
        return Err(GppsError::invalid("one source and one target count per group required"));
    }
    if !(inputs.kappa > T::zero()) {
        return Err(GppsError::invalid("kappa must be positive; the bound diverges otherwise"));
    }
    if inputs.kappa > T::one() {
        return Err(GppsError::invalid("kappa must not exceed 1"));
    }
    if !(inputs.confidence > T::zero() && inputs.confidence < T::one()) {
        return Err(GppsError::invalid("confidence must lie in (0, 1)"));
    }
    if !(inputs.c1 > T::zero() && inputs.c2 > T::zero()) {
        return Err(GppsError::invalid("bound constants must be positive"));
    }
    if inputs.source_counts.iter().chain(&inputs.target_counts).any(|&n| n == 0) {
        return Err(GppsError::invalid("sample counts must be at least 1"));
    }
    let log_factor = (T::from_count(group_count) / inputs.confidence).ln().sqrt();
    let per_group = inputs
        .source_counts
        .iter()
        .zip(&inputs.target_counts)
        .map(|(&n, &m)| inputs.c1 / (inputs.kappa * T::from_count(m).sqrt()) + inputs.c2 / T::from_count(n).sqrt());
    Ok(crate::scalar::stable_sum(per_group) * log_factor)
}
