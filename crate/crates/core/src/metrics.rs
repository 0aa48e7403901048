//! Empirical groupwise rates, acceptance rates, PPV and fairness gaps.
//!
//! The decision rule is `score >= threshold` everywhere, so empirical acceptance
//! curves are right-continuous step functions of the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::scalar::Scalar;
use crate::types::{Grouped, LabeledDataset, ThresholdRule};

/// ROC curve of one group over its distinct scores, highest threshold first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RocCurve<T> {
    /// Distinct scores in decreasing order; point `i` accepts `score >= thresholds[i]`.
    pub thresholds: Vec<T>,
    pub tpr: Vec<T>,
    pub fpr: Vec<T>,
    pub auc: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GroupRates<T> {
    pub tpr: Vec<T>,
    pub fpr: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roc: Option<Vec<RocCurve<T>>>,
}

impl<T: Scalar> GroupRates<T> {
    pub fn group_count(&self) -> usize {
        self.tpr.len()
    }
}

fn check_lengths<T: Scalar, D: Grouped>(scores: &[T], data: &D, thresholds: &ThresholdRule<T>) -> Result<()> {
    if scores.len() != data.len() {
        return Err(GppsError::invalid(format!(
            "{} scores for {} rows",
            scores.len(),
            data.len()
        )));
    }
    if thresholds.group_count() != data.group_count() {
        return Err(GppsError::invalid(format!(
            "{} thresholds for {} groups",
            thresholds.group_count(),
            data.group_count()
        )));
    }
    Ok(())
}

/// `[group][label][accepted]` counts.
fn tally<T: Scalar>(scores: &[T], data: &LabeledDataset<T>, thresholds: &ThresholdRule<T>) -> Vec<[[usize; 2]; 2]> {
    let mut counts = vec![[[0usize; 2]; 2]; data.group_count()];
    for ((s, g), &y) in scores.iter().zip(data.groups()).zip(data.labels()) {
        let accepted = thresholds.accepts(*s, *g);
        counts[g.0][usize::from(y)][usize::from(accepted)] += 1;
    }
    counts
}

/// Per-group TPR and FPR at the given thresholds.
pub fn confusion_rates<T: Scalar>(
    scores: &[T],
    data: &LabeledDataset<T>,
    thresholds: &ThresholdRule<T>,
) -> Result<GroupRates<T>> {
    check_lengths(scores, data, thresholds)?;
    let counts = tally(scores, data, thresholds);
    let mut tpr = Vec::with_capacity(counts.len());
    let mut fpr = Vec::with_capacity(counts.len());
    for (group, c) in counts.iter().enumerate() {
        for label in 0..2 {
            if c[label][0] + c[label][1] == 0 {
                return Err(GppsError::EmptyStratum {
                    group,
                    label: label as u8,
                });
            }
        }
        tpr.push(T::ratio(c[1][1], c[1][0] + c[1][1]));
        fpr.push(T::ratio(c[0][1], c[0][0] + c[0][1]));
    }
    Ok(GroupRates { tpr, fpr, roc: None })
}

/// Per-group ROC curves with AUC (ties count one half).
pub fn group_roc<T: Scalar>(scores: &[T], data: &LabeledDataset<T>) -> Result<Vec<RocCurve<T>>> {
    if scores.len() != data.len() {
        return Err(GppsError::invalid("scores and rows differ in length"));
    }
    let mut out = Vec::with_capacity(data.group_count());
    for (group, rows) in data.group_indices().iter().enumerate() {
        let mut pairs: Vec<(T, bool)> = rows.iter().map(|&i| (scores[i], data.label(i))).collect();
        let pos = pairs.iter().filter(|p| p.1).count();
        let neg = pairs.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(GppsError::EmptyStratum {
                group,
                label: u8::from(pos == 0),
            });
        }
        pairs.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores"));
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut thresholds = Vec::new();
        let mut tpr = Vec::new();
        let mut fpr = Vec::new();
        // Trapezoid area accumulated in doubled integer units: sum of (fp step) * (tp_before + tp_after).
        let mut area2: u128 = 0;
        let mut i = 0;
        while i < pairs.len() {
            let s = pairs[i].0;
            let (tp0, fp0) = (tp, fp);
            while i < pairs.len() && pairs[i].0 == s {
                if pairs[i].1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            area2 += ((fp - fp0) as u128) * ((tp0 + tp) as u128);
            thresholds.push(s);
            tpr.push(T::ratio(tp, pos));
            fpr.push(T::ratio(fp, neg));
        }
        let auc = T::lit(area2 as f64 / (2.0 * pos as f64 * neg as f64));
        out.push(RocCurve {
            thresholds,
            tpr,
            fpr,
            auc,
        });
    }
    Ok(out)
}

/// Per-group fraction of rows with `score >= t_a`.
pub fn acceptance_rate<T: Scalar, D: Grouped>(
    scores: &[T],
    data: &D,
    thresholds: &ThresholdRule<T>,
) -> Result<Vec<T>> {
    check_lengths(scores, data, thresholds)?;
    let k = data.group_count();
    let mut accepted = vec![0usize; k];
    let mut total = vec![0usize; k];
    for (s, g) in scores.iter().zip(data.groups()) {
        total[g.0] += 1;
        if thresholds.accepts(*s, *g) {
            accepted[g.0] += 1;
        }
    }
    if let Some(group) = total.iter().position(|&n| n == 0) {
        return Err(GppsError::EmptyGroup { group });
    }
    Ok(accepted.iter().zip(&total).map(|(a, n)| T::ratio(*a, *n)).collect())
}

/// Per-group positive predictive value; `None` where a group accepts no rows.
pub fn ppv<T: Scalar>(
    scores: &[T],
    data: &LabeledDataset<T>,
    thresholds: &ThresholdRule<T>,
) -> Result<Vec<Option<T>>> {
    check_lengths(scores, data, thresholds)?;
    let counts = tally(scores, data, thresholds);
    Ok(counts
        .iter()
        .map(|c| {
            let accepted = c[0][1] + c[1][1];
            (accepted > 0).then(|| T::ratio(c[1][1], accepted))
        })
        .collect())
}

/// Fairness gaps, accuracy and 0-1 risk of a thresholded scorer.
///
/// Flat JSON keys: `accuracy`, `risk`, `gap_eo`, `gap_dp`, `gap_ppv` (`null`
/// when some group's PPV is undefined), `tpr`, `fpr`, `acceptance_rate`, `ppv`
/// (per-group arrays, `null` entries for undefined PPV) and `gap_eo_form`,
/// which is always `"sum_abs_tpr_fpr"`: `|dTPR| + |dFPR|`, maximized over
/// group pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GapReport<T> {
    pub accuracy: T,
    pub risk: T,
    pub gap_eo: T,
    pub gap_dp: T,
    pub gap_ppv: Option<T>,
    pub tpr: Vec<T>,
    pub fpr: Vec<T>,
    pub acceptance_rate: Vec<T>,
    pub ppv: Vec<Option<T>>,
    pub gap_eo_form: String,
}

pub const GAP_EO_FORM: &str = "sum_abs_tpr_fpr";

impl<T: Scalar> GapReport<T> {
    /// Header of [`GapReport::csv_row`].
    pub fn csv_header(group_count: usize) -> Vec<String> {
        let mut h: Vec<String> = ["accuracy", "risk", "gap_eo", "gap_dp", "gap_ppv"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for prefix in ["tpr", "fpr", "ar", "ppv"] {
            h.extend((0..group_count).map(|a| format!("{prefix}_{a}")));
        }
        h
    }

    /// One CSV row; undefined values are written as `NA`.
    pub fn csv_row(&self) -> Vec<String> {
        let f = |v: T| format!("{v}");
        let opt = |v: Option<T>| v.map_or_else(|| "NA".to_string(), f);
        let mut row = vec![f(self.accuracy), f(self.risk), f(self.gap_eo), f(self.gap_dp), opt(self.gap_ppv)];
        row.extend(self.tpr.iter().copied().map(f));
        row.extend(self.fpr.iter().copied().map(f));
        row.extend(self.acceptance_rate.iter().copied().map(f));
        row.extend(self.ppv.iter().copied().map(opt));
        row
    }
}

/// Largest pairwise value of `f(a, b)` over groups; zero with a single group.
pub fn max_pairwise<T: Scalar>(k: usize, f: impl Fn(usize, usize) -> T) -> T {
    let mut best = T::zero();
    for a in 0..k {
        for b in a + 1..k {
            best = best.max(f(a, b));
        }
    }
    best
}

pub fn eo_gap<T: Scalar>(tpr: &[T], fpr: &[T]) -> T {
    max_pairwise(tpr.len(), |a, b| (tpr[a] - tpr[b]).abs() + (fpr[a] - fpr[b]).abs())
}

pub fn dp_gap<T: Scalar>(acceptance: &[T]) -> T {
    max_pairwise(acceptance.len(), |a, b| (acceptance[a] - acceptance[b]).abs())
}

/// `None` when any group's PPV is undefined.
pub fn ppv_gap<T: Scalar>(ppv: &[Option<T>]) -> Option<T> {
    let defined: Option<Vec<T>> = ppv.iter().copied().collect();
    defined.map(|v| max_pairwise(v.len(), |a, b| (v[a] - v[b]).abs()))
}

pub fn gap_report<T: Scalar>(
    scores: &[T],
    data: &LabeledDataset<T>,
    thresholds: &ThresholdRule<T>,
) -> Result<GapReport<T>> {
    let rates = confusion_rates(scores, data, thresholds)?;
    let acceptance = acceptance_rate(scores, data, thresholds)?;
    let ppv = ppv(scores, data, thresholds)?;
    let errors = scores
        .iter()
        .zip(data.groups())
        .zip(data.labels())
        .filter(|((s, g), y)| thresholds.accepts(**s, **g) != **y)
        .count();
    let risk = T::ratio(errors, data.len());
    Ok(GapReport {
        accuracy: T::ratio(data.len() - errors, data.len()),
        risk,
        gap_eo: eo_gap(&rates.tpr, &rates.fpr),
        gap_dp: dp_gap(&acceptance),
        gap_ppv: ppv_gap(&ppv),
        tpr: rates.tpr,
        fpr: rates.fpr,
        acceptance_rate: acceptance,
        ppv,
        gap_eo_form: GAP_EO_FORM.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DomainTag;

    fn toy() -> (Vec<f64>, LabeledDataset<f64>) {
        let rows = vec![vec![0.0]; 4];
        let d = LabeledDataset::from_rows(&rows, &[true, true, false, false], &[0; 4], 1, DomainTag::Source).unwrap();
        (vec![0.9, 0.6, 0.4, 0.1], d)
    }

    fn t(v: f64) -> ThresholdRule<f64> {
        ThresholdRule::uniform(v, 1).unwrap()
    }

    #[test]
    fn toy_rates_by_hand() {
        let (s, d) = toy();
        let r = confusion_rates(&s, &d, &t(0.5)).unwrap();
        assert_eq!((r.tpr[0], r.fpr[0]), (1.0, 0.0));
        let r = confusion_rates(&s, &d, &t(0.7)).unwrap();
        assert_eq!((r.tpr[0], r.fpr[0]), (0.5, 0.0));
        let r = confusion_rates(&s, &d, &t(0.0)).unwrap();
        assert_eq!((r.tpr[0], r.fpr[0]), (1.0, 1.0));
    }

    #[test]
    fn ties_are_accepted() {
        let (_, d) = toy();
        let s = vec![0.5, 0.5, 0.5, 0.5];
        assert_eq!(acceptance_rate(&s, &d, &t(0.5)).unwrap(), vec![1.0]);
    }

    #[test]
    fn toy_acceptance_and_ppv() {
        let (s, d) = toy();
        assert_eq!(acceptance_rate(&s, &d, &t(0.5)).unwrap(), vec![0.5]);
        assert_eq!(acceptance_rate(&s, &d, &t(0.0)).unwrap(), vec![1.0]);
        assert_eq!(ppv(&s, &d, &t(0.5)).unwrap(), vec![Some(1.0)]);
        assert_eq!(ppv(&s, &d, &t(0.0)).unwrap(), vec![Some(0.5)]);
        assert_eq!(ppv(&s, &d, &t(0.95)).unwrap(), vec![None]);
    }

    #[test]
    fn all_accepted_negative_gives_zero_ppv() {
        let rows = vec![vec![0.0]; 3];
        let d = LabeledDataset::from_rows(&rows, &[true, false, false], &[0; 3], 1, DomainTag::Source).unwrap();
        assert_eq!(ppv(&[0.1, 0.8, 0.9], &d, &t(0.5)).unwrap(), vec![Some(0.0)]);
    }

    #[test]
    fn missing_label_class_is_an_error() {
        let rows = vec![vec![0.0]; 2];
        let d = LabeledDataset::from_rows(&rows, &[true, true], &[0, 0], 1, DomainTag::Source).unwrap();
        assert!(matches!(
            confusion_rates(&[0.2, 0.3], &d, &t(0.5)),
            Err(GppsError::EmptyStratum { group: 0, label: 0 })
        ));
    }

    #[test]
    fn identical_groups_have_zero_gaps() {
        let rows = vec![vec![0.0]; 8];
        let labels = [true, true, false, false, true, true, false, false];
        let groups = [0, 0, 0, 0, 1, 1, 1, 1];
        let d = LabeledDataset::from_rows(&rows, &labels, &groups, 2, DomainTag::Source).unwrap();
        let s = [0.9, 0.3, 0.6, 0.1, 0.9, 0.3, 0.6, 0.1];
        let r = gap_report(&s, &d, &ThresholdRule::uniform(0.5, 2).unwrap()).unwrap();
        assert_eq!((r.gap_eo, r.gap_dp, r.gap_ppv), (0.0, 0.0, Some(0.0)));
        assert_eq!(r.accuracy + r.risk, 1.0);
    }

    #[test]
    fn eo_gap_sum_form() {
        let g: f64 = eo_gap(&[0.8, 0.6], &[0.2, 0.3]);
        assert!((g - 0.3).abs() < 1e-15);
    }

    #[test]
    fn gaps_take_max_over_pairs() {
        assert!((dp_gap::<f64>(&[0.1, 0.4, 0.3]) - 0.3).abs() < 1e-15);
        assert_eq!(dp_gap(&[0.7]), 0.0);
        assert_eq!(ppv_gap(&[Some(0.5), None]), None);
    }

    #[test]
    fn roc_curve_and_auc() {
        let (s, d) = toy();
        let roc = group_roc(&s, &d).unwrap();
        assert_eq!(roc[0].auc, 1.0);
        assert_eq!(roc[0].thresholds, vec![0.9, 0.6, 0.4, 0.1]);
        assert_eq!(roc[0].tpr, vec![0.5, 1.0, 1.0, 1.0]);
        // tied scores across classes count half
        let flat = group_roc(&[0.5; 4], &d).unwrap();
        assert_eq!(flat[0].auc, 0.5);
    }

    #[test]
    fn report_serializes_undefined_ppv_as_null() {
        let (s, d) = toy();
        let r = gap_report(&s, &d, &t(0.95)).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert!(v["ppv"][0].is_null());
        assert_eq!(r.csv_row()[4], "NA");
        assert_eq!(GapReport::<f64>::csv_header(1).len(), r.csv_row().len());
    }
}
