//! Oracle baseline: per-group thresholds tuned with labeled target rows.

use gpps_core::tapgpps::{empirical_ar_curve, threshold_for_ar, TapConfig};
use gpps_core::{Grouped, LabeledDataset64, ThresholdRule64};

use crate::error::CliResult;

/// Acceptance levels tried per group: 0, 0.01, ..., 1.
pub const ORACLE_LEVELS: usize = 101;

#[derive(Debug, Clone)]
pub struct OracleChoice {
    pub rule: ThresholdRule64,
    pub accuracy: f64,
    pub gap_dp: f64,
    /// No combination met the DP tolerance; the most accurate one was kept.
    pub infeasible: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    threshold: f64,
    acceptance: f64,
    correct: usize,
}

/// Most accurate threshold combination whose acceptance rates on `data` lie
/// within `delta` of each other.
///
/// Each group contributes the thresholds hitting acceptance levels
/// `0, 1/100, ..., 1`; for every window `[L, L + delta]` each group takes its
/// most accurate candidate inside the window, which is exact for the
/// max-minus-min constraint.
pub fn oracle_thresholds(scores: &[f64], data: &LabeledDataset64, delta: f64) -> CliResult<OracleChoice> {
    let config = TapConfig::<f64>::default();
    let rows = data.group_indices();
    let mut per_group: Vec<Vec<Candidate>> = Vec::with_capacity(rows.len());
    for idx in &rows {
        let s: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let curve = empirical_ar_curve(&s)?;
        let mut cands: Vec<Candidate> = Vec::with_capacity(ORACLE_LEVELS);
        for j in 0..ORACLE_LEVELS {
            let gamma = j as f64 / (ORACLE_LEVELS - 1) as f64;
            let choice = threshold_for_ar(&curve, gamma, &config)?;
            if cands.iter().any(|c| c.threshold == choice.threshold) {
                continue;
            }
            let correct = idx
                .iter()
                .filter(|&&i| (scores[i] >= choice.threshold) == data.label(i))
                .count();
            cands.push(Candidate {
                threshold: choice.threshold,
                acceptance: choice.achieved,
                correct,
            });
        }
        per_group.push(cands);
    }

    let total = data.len() as f64;
    let evaluate = |picks: &[Candidate]| {
        let correct: usize = picks.iter().map(|c| c.correct).sum();
        let hi = picks.iter().map(|c| c.acceptance).fold(f64::MIN, f64::max);
        let lo = picks.iter().map(|c| c.acceptance).fold(f64::MAX, f64::min);
        (correct as f64 / total, hi - lo)
    };

    let mut best: Option<(Vec<Candidate>, f64, f64)> = None;
    let anchors: Vec<f64> = per_group.iter().flatten().map(|c| c.acceptance).collect();
    for &lo in &anchors {
        let hi = lo + delta;
        let picks: Option<Vec<Candidate>> = per_group
            .iter()
            .map(|cands| {
                cands
                    .iter()
                    .filter(|c| c.acceptance >= lo && c.acceptance <= hi)
                    .max_by_key(|c| c.correct)
                    .copied()
            })
            .collect();
        if let Some(p) = picks {
            let (acc, gap) = evaluate(&p);
            if best.as_ref().is_none_or(|b| acc > b.1) {
                best = Some((p, acc, gap));
            }
        }
    }

    let (picks, accuracy, gap_dp, infeasible) = match best {
        Some((p, acc, gap)) => (p, acc, gap, false),
        None => {
            let p: Vec<Candidate> = per_group
                .iter()
                .map(|c| *c.iter().max_by_key(|c| c.correct).expect("non-empty"))
                .collect();
            let (acc, gap) = evaluate(&p);
            (p, acc, gap, true)
        }
    };
    Ok(OracleChoice {
        rule: ThresholdRule64::new(picks.iter().map(|c| c.threshold).collect())?,
        accuracy,
        gap_dp,
        infeasible,
    })
}
