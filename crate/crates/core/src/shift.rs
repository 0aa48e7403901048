//! Target prevalence estimation from unlabeled rows and groupwise posterior
//! correction.

use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::models::ScoreModel;
use crate::scalar::Scalar;
use crate::types::PrevalenceTable;

/// Per-group class reweighting `w1 = pi_tgt / pi_src`, `w0 = (1 - pi_tgt) / (1 - pi_src)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CorrectionWeights<T> {
    pub w1: Vec<T>,
    pub w0: Vec<T>,
}

impl<T: Scalar> CorrectionWeights<T> {
    pub fn group(&self, a: usize) -> (T, T) {
        (self.w1[a], self.w0[a])
    }

    pub fn is_identity(&self) -> bool {
        self.w1.iter().chain(&self.w0).all(|w| *w == T::one())
    }
}

fn single_weights<T: Scalar>(group: usize, pi_src: T, pi_tgt: T) -> Result<(T, T)> {
    if !(pi_src > T::zero() && pi_src < T::one()) {
        return Err(GppsError::Undefined(format!(
            "correction weight for group {group} with source prevalence {pi_src}"
        )));
    }
    if !(pi_tgt > T::zero() && pi_tgt < T::one()) {
        return Err(GppsError::invalid(format!(
            "target prevalence {pi_tgt} of group {group} must lie strictly inside (0, 1)"
        )));
    }
    Ok((pi_tgt / pi_src, (T::one() - pi_tgt) / (T::one() - pi_src)))
}

pub fn correction_weights<T: Scalar>(
    pi_src: &PrevalenceTable<T>,
    pi_tgt: &PrevalenceTable<T>,
) -> Result<CorrectionWeights<T>> {
    if pi_src.group_count() != pi_tgt.group_count() {
        return Err(GppsError::invalid("source and target tables differ in group count"));
    }
    let (w1, w0) = (0..pi_src.group_count())
        .map(|a| single_weights(a, pi_src.get(a), pi_tgt.get(a)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .unzip();
    Ok(CorrectionWeights { w1, w0 })
}

/// `w1 p / (w0 + (w1 - w0) p)`, with 0 and 1 as fixed points.
pub fn correct_posterior<T: Scalar>(p_src: T, w1: T, w0: T) -> T {
    if p_src <= T::zero() {
        return T::zero();
    }
    if p_src >= T::one() {
        return T::one();
    }
    let num = w1 * p_src;
    // w0 (1 - p) + w1 p keeps both terms non-negative.
    let den = w0 * (T::one() - p_src) + num;
    if den <= T::zero() {
        return p_src;
    }
    (num / den).min(T::one())
}

/// Posterior correction from `pi_src` to `pi_tgt` applied on top of `model`.
pub fn corrected_score_model<T: Scalar>(
    model: &ScoreModel<T>,
    pi_src: &PrevalenceTable<T>,
    pi_tgt: &PrevalenceTable<T>,
) -> Result<ScoreModel<T>> {
    if model.group_count() != pi_src.group_count() {
        return Err(GppsError::invalid("model and prevalence table differ in group count"));
    }
    let weights = correction_weights(pi_src, pi_tgt)?;
    Ok(ScoreModel::PriorCorrected {
        w1: weights.w1,
        w0: weights.w0,
        inner: Box::new(model.clone()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorMethod {
    Em,
    Bbse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub method: EstimatorMethod,
    pub em_max_iterations: usize,
    pub em_tolerance: f64,
    pub bbse_threshold: f64,
    /// Estimates are clipped to `[clip, 1 - clip]`.
    pub clip: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            method: EstimatorMethod::Em,
            em_max_iterations: 50,
            em_tolerance: 1e-6,
            bbse_threshold: 0.5,
            clip: 1e-3,
        }
    }
}

impl EstimatorConfig {
    pub fn em() -> Self {
        Self::default()
    }

    pub fn bbse() -> Self {
        Self {
            method: EstimatorMethod::Bbse,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.em_tolerance > 0.0 && self.em_tolerance < 1.0) {
            return Err(GppsError::invalid("em_tolerance must lie in (0, 1)"));
        }
        if !(self.bbse_threshold > 0.0 && self.bbse_threshold < 1.0) {
            return Err(GppsError::invalid("bbse_threshold must lie in (0, 1)"));
        }
        if !(self.clip > 0.0 && self.clip < 0.1) {
            return Err(GppsError::invalid("clip must lie in (0, 0.1)"));
        }
        if self.em_max_iterations == 0 {
            return Err(GppsError::invalid("em_max_iterations must be positive"));
        }
        Ok(())
    }
}

fn clip<T: Scalar>(v: T, eps: f64) -> (T, bool) {
    let lo = T::lit(eps);
    let hi = T::one() - lo;
    if v < lo {
        (lo, true)
    } else if v > hi {
        (hi, true)
    } else {
        (v, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmEstimate<T> {
    pub estimate: T,
    pub raw: T,
    pub iterations: usize,
    pub converged: bool,
    pub clipped: bool,
    /// `|pi(k+1) - pi(k)|` for every iteration.
    pub steps: Vec<T>,
}

/// Fixed-point prevalence estimate for one group's target rows:
/// `pi(k+1) = mean_j correct(p_src_j; pi_src -> pi(k))`, starting at `pi_src`.
pub fn em_prevalence<T: Scalar>(target_scores: &[T], pi_src: T, config: &EstimatorConfig) -> Result<EmEstimate<T>> {
    config.validate()?;
    if target_scores.is_empty() {
        return Err(GppsError::invalid("EM needs at least one target row"));
    }
    if !(pi_src > T::zero() && pi_src < T::one()) {
        return Err(GppsError::invalid(format!(
            "source prevalence {pi_src} must lie strictly inside (0, 1)"
        )));
    }
    let m = T::from_count(target_scores.len());
    let tol = T::lit(config.em_tolerance);
    let mut current = pi_src;
    let mut steps = Vec::new();
    let mut converged = false;
    for _ in 0..config.em_max_iterations {
        let w1 = current / pi_src;
        let w0 = (T::one() - current) / (T::one() - pi_src);
        let next = crate::scalar::stable_sum(target_scores.iter().map(|p| correct_posterior(*p, w1, w0))) / m;
        let step = (next - current).abs();
        steps.push(step);
        current = next;
        if step <= tol {
            converged = true;
            break;
        }
    }
    let (estimate, clipped) = clip(current, config.clip);
    Ok(EmEstimate {
        estimate,
        raw: current,
        iterations: steps.len(),
        converged,
        clipped,
        steps,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct BbseEstimate<T> {
    pub estimate: T,
    pub raw: T,
    pub tpr: T,
    pub fpr: T,
    pub target_rate: T,
    pub clipped: bool,
}

/// Binary confusion inversion `(mu - fpr) / (tpr - fpr)`, clipped.
pub fn bbse_invert<T: Scalar>(tpr: T, fpr: T, target_rate: T, eps: f64) -> Result<BbseEstimate<T>> {
    let slope = tpr - fpr;
    if slope == T::zero() {
        return Err(GppsError::Undefined(
            "BBSE inversion with tpr = fpr (singular confusion matrix)".into(),
        ));
    }
    let raw = (target_rate - fpr) / slope;
    let (estimate, clipped) = clip(raw, eps);
    Ok(BbseEstimate {
        estimate,
        raw,
        tpr,
        fpr,
        target_rate,
        clipped,
    })
}

/// Black-box shift estimate for one group: TPR/FPR of `score >= threshold`
/// on labeled source validation rows, inverted against the target acceptance rate.
pub fn bbse_prevalence<T: Scalar>(
    val_scores: &[T],
    val_labels: &[bool],
    target_scores: &[T],
    config: &EstimatorConfig,
) -> Result<BbseEstimate<T>> {
    config.validate()?;
    if val_scores.len() != val_labels.len() {
        return Err(GppsError::invalid("validation scores and labels differ in length"));
    }
    if target_scores.is_empty() {
        return Err(GppsError::invalid("BBSE needs at least one target row"));
    }
    let t = T::lit(config.bbse_threshold);
    let (mut pos, mut tp, mut neg, mut fp) = (0usize, 0usize, 0usize, 0usize);
    for (s, &y) in val_scores.iter().zip(val_labels) {
        let accepted = *s >= t;
        if y {
            pos += 1;
            tp += usize::from(accepted);
        } else {
            neg += 1;
            fp += usize::from(accepted);
        }
    }
    if pos == 0 || neg == 0 {
        return Err(GppsError::invalid("BBSE validation rows must contain both labels"));
    }
    let accepted = target_scores.iter().filter(|s| **s >= t).count();
    bbse_invert(
        T::ratio(tp, pos),
        T::ratio(fp, neg),
        T::ratio(accepted, target_scores.len()),
        config.clip,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_gaussian, GaussianParams};
    use crate::models::gaussian_bayes_posterior;
    use crate::types::{GroupId, Grouped};

    fn table(p: &[f64]) -> PrevalenceTable<f64> {
        PrevalenceTable::new(p.to_vec()).unwrap()
    }

    #[test]
    fn weights_examples() {
        let w = correction_weights(&table(&[0.4, 0.7]), &table(&[0.4, 0.7])).unwrap();
        assert!(w.is_identity());
        let w = correction_weights(&table(&[0.5]), &table(&[0.8])).unwrap();
        assert!((w.w1[0] - 1.6).abs() < 1e-15 && (w.w0[0] - 0.4).abs() < 1e-15);
        let w = correction_weights(&table(&[0.3]), &table(&[0.5])).unwrap();
        assert!((w.w1[0] - 5.0 / 3.0).abs() < 1e-15 && (w.w0[0] - 5.0 / 7.0).abs() < 1e-15);
        assert!(correction_weights(&table(&[0.0]), &table(&[0.5])).is_err());
        assert!(correction_weights(&table(&[1.0]), &table(&[0.5])).is_err());
    }

    #[test]
    fn correction_examples() {
        for p in [0.0, 0.1, 0.5, 0.93, 1.0] {
            assert_eq!(correct_posterior(p, 1.0, 1.0), p);
        }
        assert!((correct_posterior::<f64>(0.5, 1.6, 0.4) - 0.8).abs() < 1e-15);
        assert_eq!(correct_posterior(0.0, 1.6, 0.4), 0.0);
        assert_eq!(correct_posterior(1.0, 1.6, 0.4), 1.0);
    }

    /// Bayes' rule on a two-point feature space: P(x=1|y=1)=0.7, P(x=1|y=0)=0.2.
    #[test]
    fn correction_matches_direct_bayes_on_discrete_features() {
        let lik = |x: bool, y: bool| match (x, y) {
            (true, true) => 0.7,
            (false, true) => 0.3,
            (true, false) => 0.2,
            (false, false) => 0.8,
        };
        let post = |x: bool, pi: f64| pi * lik(x, true) / (pi * lik(x, true) + (1.0 - pi) * lik(x, false));
        let (ps, pt) = (0.5, 0.8);
        let w = correction_weights(&table(&[ps]), &table(&[pt])).unwrap();
        for x in [true, false] {
            let c = correct_posterior(post(x, ps), w.w1[0], w.w0[0]);
            assert!((c - post(x, pt)).abs() < 1e-15);
        }
    }

    #[test]
    fn em_all_ones_clips_high() {
        let e = em_prevalence(&[1.0; 20], 0.3, &EstimatorConfig::default()).unwrap();
        assert_eq!(e.estimate, 1.0 - 1e-3);
        assert!(e.clipped);
    }

    #[test]
    fn em_needs_rows() {
        assert!(em_prevalence::<f64>(&[], 0.3, &EstimatorConfig::default()).is_err());
    }

    fn oracle_scores(pi_tgt: f64, m: usize, seed: u64) -> (Vec<Vec<f64>>, f64) {
        let params = GaussianParams::<f64>::default_synthetic();
        let pi_src = 0.3;
        let model = gaussian_bayes_posterior(&params, &table(&[pi_src, pi_src])).unwrap();
        let data = generate_gaussian(&params, &table(&[pi_tgt, pi_tgt]), m, seed).unwrap();
        let scores = model.score_rows(&data);
        let per_group = data
            .group_indices()
            .iter()
            .map(|rows| rows.iter().map(|&i| scores[i]).collect())
            .collect();
        (per_group, pi_src)
    }

    #[test]
    fn em_no_shift_recovers_source_prevalence() {
        let (scores, pi_src) = oracle_scores(0.3, 5000, 41);
        for g in &scores {
            let e = em_prevalence(g, pi_src, &EstimatorConfig::default()).unwrap();
            assert!((e.estimate - 0.3).abs() <= 0.02, "{}", e.estimate);
        }
    }

    #[test]
    fn em_recovers_known_shift() {
        let (scores, pi_src) = oracle_scores(0.7, 5000, 42);
        for g in &scores {
            let e = em_prevalence(g, pi_src, &EstimatorConfig::default()).unwrap();
            assert!((e.estimate - 0.7).abs() <= 0.03, "{}", e.estimate);
            assert!(e.iterations <= 50);
        }
    }

    #[test]
    fn bbse_inversion_examples() {
        let e = bbse_invert::<f64>(0.8, 0.2, 0.5, 1e-3).unwrap();
        assert!((e.estimate - 0.5).abs() < 1e-15);
        let e = bbse_invert::<f64>(0.8, 0.2, 0.2, 1e-3).unwrap();
        assert_eq!(e.estimate, 1e-3);
        let e = bbse_invert::<f64>(0.8, 0.2, 0.1, 1e-3).unwrap();
        assert!((e.raw + 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(e.estimate, 1e-3);
        assert!(e.clipped);
        assert!(matches!(bbse_invert(0.4, 0.4, 0.3, 1e-3), Err(GppsError::Undefined(_))));
    }

    #[test]
    fn bbse_from_scores_by_hand() {
        // validation: tpr = 3/4, fpr = 1/4; target acceptance 1/2 -> pi = 1/2
        let val: [f64; 8] = [0.9, 0.8, 0.7, 0.2, 0.6, 0.1, 0.3, 0.4];
        let labels = [true, true, true, true, false, false, false, false];
        let target = [0.9, 0.1, 0.55, 0.45];
        let e = bbse_prevalence(&val, &labels, &target, &EstimatorConfig::bbse()).unwrap();
        assert_eq!((e.tpr, e.fpr, e.target_rate), (0.75, 0.25, 0.5));
        assert!((e.estimate - 0.5).abs() < 1e-15);
    }

    #[test]
    fn corrected_model_equals_posterior_built_at_target() {
        let params = GaussianParams::<f64>::default_synthetic();
        let src = table(&[0.3, 0.5]);
        let tgt = table(&[0.55, 0.2]);
        let base = gaussian_bayes_posterior(&params, &src).unwrap();
        let direct = gaussian_bayes_posterior(&params, &tgt).unwrap();
        let corrected = corrected_score_model(&base, &src, &tgt).unwrap();
        let same = corrected_score_model(&base, &src, &src).unwrap();
        for i in 0..200 {
            let x = [(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.91).cos() * 3.0];
            let g = GroupId(i % 2);
            assert!((corrected.score(&x, g) - direct.score(&x, g)).abs() <= 1e-10);
            assert!((same.score(&x, g) - base.score(&x, g)).abs() <= 1e-15);
        }
    }

    #[test]
    fn estimator_config_validation() {
        assert!(EstimatorConfig { clip: 0.2, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig { bbse_threshold: 1.0, ..Default::default() }.validate().is_err());
        assert!(EstimatorConfig::default().validate().is_ok());
    }
}
