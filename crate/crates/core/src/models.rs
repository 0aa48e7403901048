//! Source posterior models `p_src(1 | x, a)`.
//!
//! [`ScoreModel`] is a closed set of scorers: a logistic regression trained by
//! [`train_logistic`], the exact linear-discriminant posterior of a
//! [`GaussianParams`] model, and two wrappers (temperature scaling and the
//! prior-shift correction built by [`crate::shift::corrected_score_model`]).
//! Models serialize to JSON tagged by `kind`:
//!
//! ```json
//! {"kind":"logistic","weights":[..],"group_weights":[..],"bias":0.1,"group_count":2}
//! {"kind":"gaussian-bayes","slopes":[[..],[..]],"intercepts":[..],"group_count":2}
//! {"kind":"calibrated-wrapper","temperature":1.3,"group_temperatures":null,"inner":{..}}
//! {"kind":"prior-corrected","w1":[..],"w0":[..],"inner":{..}}
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{dot, GaussianParams};
use crate::error::{GppsError, Result};
use crate::scalar::{logit, sigmoid, stable_sum, Scalar};
use crate::shift::correct_posterior;
use crate::types::{FeatureRows, GroupId, Grouped, LabeledDataset, PrevalenceTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Logistic,
    GaussianBayes,
    CalibratedWrapper,
    PriorCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "T: Scalar")]
pub enum ScoreModel<T> {
    /// `logit = weights . x + group_weights[a] + bias`.
    Logistic {
        weights: Vec<T>,
        group_weights: Vec<T>,
        bias: T,
        group_count: usize,
    },
    /// `logit = slopes[a] . x + intercepts[a]`.
    GaussianBayes {
        slopes: Vec<Vec<T>>,
        intercepts: Vec<T>,
        group_count: usize,
    },
    /// `logit = inner_logit / T_a`; `T_a` is the group temperature when present.
    CalibratedWrapper {
        temperature: T,
        group_temperatures: Option<Vec<T>>,
        inner: Box<ScoreModel<T>>,
    },
    /// Inner posterior reweighted by per-group class weights `w1`, `w0`.
    PriorCorrected {
        w1: Vec<T>,
        w0: Vec<T>,
        inner: Box<ScoreModel<T>>,
    },
}

impl<T: Scalar> ScoreModel<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            ScoreModel::Logistic { .. } => ModelKind::Logistic,
            ScoreModel::GaussianBayes { .. } => ModelKind::GaussianBayes,
            ScoreModel::CalibratedWrapper { .. } => ModelKind::CalibratedWrapper,
            ScoreModel::PriorCorrected { .. } => ModelKind::PriorCorrected,
        }
    }

    pub fn group_count(&self) -> usize {
        match self {
            ScoreModel::Logistic { group_count, .. } | ScoreModel::GaussianBayes { group_count, .. } => {
                *group_count
            }
            ScoreModel::CalibratedWrapper { inner, .. } | ScoreModel::PriorCorrected { inner, .. } => {
                inner.group_count()
            }
        }
    }

    /// Raw log-odds for one row.
    pub fn logit(&self, x: &[T], group: GroupId) -> T {
        let a = group.index();
        match self {
            ScoreModel::Logistic {
                weights,
                group_weights,
                bias,
                ..
            } => dot(weights, x) + group_weights[a] + *bias,
            ScoreModel::GaussianBayes {
                slopes, intercepts, ..
            } => dot(&slopes[a], x) + intercepts[a],
            ScoreModel::CalibratedWrapper {
                temperature,
                group_temperatures,
                inner,
            } => {
                let t = group_temperatures.as_ref().map_or(*temperature, |g| g[a]);
                inner.logit(x, group) / t
            }
            ScoreModel::PriorCorrected { w1, w0, inner } => {
                inner.logit(x, group) + (w1[a] / w0[a]).ln()
            }
        }
    }

    /// Score in `[0, 1]`.
    pub fn score(&self, x: &[T], group: GroupId) -> T {
        match self {
            ScoreModel::PriorCorrected { w1, w0, inner } => {
                let a = group.index();
                correct_posterior(inner.score(x, group), w1[a], w0[a])
            }
            _ => sigmoid(self.logit(x, group)),
        }
    }

    pub fn score_rows<D: FeatureRows<T>>(&self, data: &D) -> Vec<T> {
        let groups = data.groups();
        (0..data.len())
            .map(|i| self.score(data.row(i), groups[i]))
            .collect()
    }

    pub fn logit_rows<D: FeatureRows<T>>(&self, data: &D) -> Vec<T> {
        let groups = data.groups();
        (0..data.len())
            .map(|i| self.logit(data.row(i), groups[i]))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    pub l2: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            max_iterations: 5000,
            tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit<T> {
    pub model: ScoreModel<T>,
    pub loss: T,
    pub gradient_norm: T,
    pub iterations: usize,
    pub converged: bool,
}

fn softplus<T: Scalar>(z: T) -> T {
    z.max(T::zero()) + (-z.abs()).exp().ln_1p()
}

/// Regularized mean logistic loss and its gradient.
///
/// The parameter vector is laid out as `[feature weights (d), group weights (k), bias]`;
/// every entry except the bias carries the `l2 / 2 * |w|^2` penalty.
pub fn logistic_objective<T: Scalar>(theta: &[T], data: &LabeledDataset<T>, l2: T) -> (T, Vec<T>) {
    let d = data.dim();
    let k = data.group_count();
    let n = T::from_count(data.len());
    let mut grad = vec![T::zero(); d + k + 1];
    let mut losses = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let x = data.row(i);
        let a = data.groups()[i].index();
        let z = dot(&theta[..d], x) + theta[d + a] + theta[d + k];
        let y = if data.label(i) { T::one() } else { T::zero() };
        losses.push(softplus(z) - y * z);
        let r = sigmoid(z) - y;
        for j in 0..d {
            grad[j] = grad[j] + r * x[j];
        }
        grad[d + a] = grad[d + a] + r;
        grad[d + k] = grad[d + k] + r;
    }
    let penalty = theta[..d + k].iter().fold(T::zero(), |s, w| s + *w * *w);
    let loss = stable_sum(losses) / n + l2 * T::half() * penalty;
    for (j, g) in grad.iter_mut().enumerate() {
        *g = *g / n;
        if j < d + k {
            *g = *g + l2 * theta[j];
        }
    }
    (loss, grad)
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |s, x| s + *x * *x).sqrt()
}

/// Fits an L2-regularized logistic regression on `x` plus one-hot group
/// indicators and a bias, by full-batch gradient descent.
///
/// Each step starts from the Barzilai-Borwein step length (1 on the first
/// step) and backtracks until the Armijo condition holds.
pub fn train_logistic<T: Scalar>(
    train: &LabeledDataset<T>,
    config: &LogisticConfig,
) -> Result<LogisticFit<T>> {
    if train.len() < 2 {
        return Err(GppsError::invalid("logistic regression needs at least 2 rows"));
    }
    let positives = train.labels().iter().filter(|y| **y).count();
    if positives == 0 || positives == train.len() {
        return Err(GppsError::invalid("training data must contain both labels"));
    }
    if !(config.l2 >= 0.0 && config.tolerance > 0.0) {
        return Err(GppsError::invalid("l2 must be >= 0 and tolerance > 0"));
    }
    let d = train.dim();
    let k = train.group_count();
    let l2 = T::lit(config.l2);
    let tol = T::lit(config.tolerance);
    let armijo = T::lit(1e-4);

    let mut theta = vec![T::zero(); d + k + 1];
    let (mut loss, mut grad) = logistic_objective(&theta, train, l2);
    let mut step = T::one();
    let mut iterations = 0;
    let mut prev: Option<(Vec<T>, Vec<T>)> = None;

    while iterations < config.max_iterations {
        if !loss.is_finite() {
            return Err(GppsError::NonFiniteLoss { iterations });
        }
        let gnorm = norm(&grad);
        if gnorm <= tol {
            break;
        }
        if let Some((p_theta, p_grad)) = &prev {
            let s: Vec<T> = theta.iter().zip(p_theta).map(|(a, b)| *a - *b).collect();
            let y: Vec<T> = grad.iter().zip(p_grad).map(|(a, b)| *a - *b).collect();
            let sy = dot(&s, &y);
            if sy > T::zero() {
                step = (dot(&s, &s) / sy).max(T::lit(1e-10)).min(T::lit(1e10));
            }
        }
        let g2 = gnorm * gnorm;
        if !g2.is_finite() {
            return Err(GppsError::NonFiniteLoss { iterations });
        }
        let mut accepted = None;
        let mut any_finite = false;
        for _ in 0..80 {
            let cand: Vec<T> = theta.iter().zip(&grad).map(|(t, g)| *t - step * *g).collect();
            let (c_loss, c_grad) = logistic_objective(&cand, train, l2);
            any_finite |= c_loss.is_finite();
            if c_loss.is_finite() && c_loss <= loss - armijo * step * g2 {
                accepted = Some((cand, c_loss, c_grad));
                break;
            }
            step = step * T::half();
        }
        iterations += 1;
        match accepted {
            Some((cand, c_loss, c_grad)) => {
                prev = Some((std::mem::replace(&mut theta, cand), std::mem::replace(&mut grad, c_grad)));
                loss = c_loss;
            }
            None if !any_finite => return Err(GppsError::NonFiniteLoss { iterations }),
            // No decrease representable at this precision.
            None => break,
        }
    }
    if !loss.is_finite() {
        return Err(GppsError::NonFiniteLoss { iterations });
    }
    let gradient_norm = norm(&grad);
    Ok(LogisticFit {
        model: ScoreModel::Logistic {
            weights: theta[..d].to_vec(),
            group_weights: theta[d..d + k].to_vec(),
            bias: theta[d + k],
            group_count: k,
        },
        loss,
        gradient_norm,
        iterations,
        converged: gradient_norm <= tol,
    })
}

pub const MIN_TEMPERATURE: f64 = 0.05;
pub const MAX_TEMPERATURE: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationFit<T> {
    /// Shared temperature (the first group's when fitted per group).
    pub temperature: T,
    pub per_group: bool,
    pub group_temperatures: Option<Vec<T>>,
}

fn temperature_nll<T: Scalar>(logits: &[T], labels: &[bool], t: T) -> T {
    stable_sum(logits.iter().zip(labels).map(|(z, &y)| {
        let s = *z / t;
        if y {
            softplus(-s)
        } else {
            softplus(s)
        }
    }))
}

/// Golden-section search for the NLL-minimizing temperature on `[0.05, 20]`.
/// The NLL is convex in `1/T`, hence unimodal in `T`.
fn fit_temperature<T: Scalar>(logits: &[T], labels: &[bool]) -> T {
    let inv_phi = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let (mut lo, mut hi) = (T::lit(MIN_TEMPERATURE), T::lit(MAX_TEMPERATURE));
    let tol = T::lit(1e-4);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = temperature_nll(logits, labels, c);
    let mut fd = temperature_nll(logits, labels, d);
    while hi - lo > tol {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = temperature_nll(logits, labels, c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = temperature_nll(logits, labels, d);
        }
    }
    (lo + hi) * T::half()
}

/// Wraps `model` so that `score = sigmoid(logit / T)`, with `T` minimizing the
/// validation negative log-likelihood. `per_group` fits one temperature per group.
pub fn calibrate_temperature<T: Scalar>(
    model: &ScoreModel<T>,
    validation: &LabeledDataset<T>,
    per_group: bool,
) -> Result<(ScoreModel<T>, CalibrationFit<T>)> {
    let counts = validation.stratum_counts();
    let (neg, pos) = counts
        .iter()
        .fold((0, 0), |(n, p), c| (n + c[0], p + c[1]));
    if neg == 0 || pos == 0 {
        return Err(GppsError::invalid("validation data must contain both labels"));
    }
    let logits = model.logit_rows(validation);
    let fit = if per_group {
        let mut temps = Vec::with_capacity(validation.group_count());
        for (a, rows) in crate::types::Grouped::group_indices(validation).iter().enumerate() {
            if counts[a][0] == 0 || counts[a][1] == 0 {
                return Err(GppsError::EmptyStratum {
                    group: a,
                    label: u8::from(counts[a][1] == 0),
                });
            }
            let z: Vec<T> = rows.iter().map(|&i| logits[i]).collect();
            let y: Vec<bool> = rows.iter().map(|&i| validation.label(i)).collect();
            temps.push(fit_temperature(&z, &y));
        }
        CalibrationFit {
            temperature: temps[0],
            per_group: true,
            group_temperatures: Some(temps),
        }
    } else {
        CalibrationFit {
            temperature: fit_temperature(&logits, validation.labels()),
            per_group: false,
            group_temperatures: None,
        }
    };
    let wrapped = ScoreModel::CalibratedWrapper {
        temperature: fit.temperature,
        group_temperatures: fit.group_temperatures.clone(),
        inner: Box::new(model.clone()),
    };
    Ok((wrapped, fit))
}

/// Exact posterior `P(Y=1 | x, a)` of a shared-covariance Gaussian model:
///
/// ```text
/// logit = logit(pi_a) + (mu1 - mu0)' S^-1 x - (mu1' S^-1 mu1 - mu0' S^-1 mu0) / 2
/// ```
pub fn gaussian_bayes_posterior<T: Scalar>(
    params: &GaussianParams<T>,
    prevalences: &PrevalenceTable<T>,
) -> Result<ScoreModel<T>> {
    let k = params.group_count();
    if prevalences.group_count() != k {
        return Err(GppsError::invalid(format!(
            "{} prevalences for {k} groups",
            prevalences.group_count()
        )));
    }
    let mut slopes = Vec::with_capacity(k);
    let mut intercepts = Vec::with_capacity(k);
    for a in 0..k {
        let pi = prevalences.get(a);
        if pi <= T::zero() || pi >= T::one() {
            return Err(GppsError::Undefined(format!(
                "posterior with prevalence {pi} in group {a}"
            )));
        }
        let mu1 = params.mean(a, true);
        let mu0 = params.mean(a, false);
        let diff: Vec<T> = mu1.iter().zip(mu0).map(|(p, q)| *p - *q).collect();
        let slope = params.solve(&diff);
        let quad1 = dot(mu1, &params.solve(mu1));
        let quad0 = dot(mu0, &params.solve(mu0));
        intercepts.push(logit(pi) - T::half() * (quad1 - quad0));
        slopes.push(slope);
    }
    Ok(ScoreModel::GaussianBayes {
        slopes,
        intercepts,
        group_count: k,
    })
}
