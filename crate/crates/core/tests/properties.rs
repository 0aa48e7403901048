use gpps_core::data::{generate_gaussian, gpps_resample};
use gpps_core::drift::{predict_acceptance_rate, predict_dp_gap, predict_ppv, RatePoint};
use gpps_core::metrics::{acceptance_rate, confusion_rates, dp_gap, eo_gap, ppv};
use gpps_core::scalar::logit;
use gpps_core::shift::{correct_posterior, correction_weights, em_prevalence, EstimatorConfig};
use gpps_core::tapgpps::{dp_gap_bound, empirical_ar_curve, label_free_risk, threshold_for_ar, BoundInputs, TapConfig};
use gpps_core::types::FeatureRows;
use gpps_core::{
    empirical_prevalence, split_dataset, DomainTag, GaussianParams64, Grouped, LabeledDataset64, PrevalenceTable64,
    SplitSpec, ThresholdRule64,
};
use proptest::prelude::*;

const K: usize = 2;

/// Rows as (feature, label, group); the first twelve rows put three in every stratum.
fn rows() -> impl Strategy<Value = Vec<(f64, bool, usize)>> {
    prop::collection::vec((-5.0..5.0f64, any::<bool>(), 0..K), 0..200).prop_map(|mut v| {
        let mut base: Vec<(f64, bool, usize)> = (0..12).map(|i| (0.1 * i as f64, i % 2 == 1, (i / 2) % K)).collect();
        base.append(&mut v);
        base
    })
}

fn dataset(rows: &[(f64, bool, usize)]) -> LabeledDataset64 {
    let features: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.0]).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.1).collect();
    let groups: Vec<usize> = rows.iter().map(|r| r.2).collect();
    LabeledDataset64::from_rows(&features, &labels, &groups, K, DomainTag::Source).unwrap()
}

fn scores_for(rows: &[(f64, bool, usize)]) -> Vec<f64> {
    rows.iter().map(|r| gpps_core::scalar::sigmoid(r.0)).collect()
}

fn rate_point() -> impl Strategy<Value = RatePoint<f64>> {
    (0.0..=1.0f64, 0.0..=1.0f64).prop_map(|(a, b)| RatePoint::new(a, b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prevalence_is_a_probability_and_order_free(r in rows()) {
        let p = empirical_prevalence(&dataset(&r)).unwrap();
        let mut rev = r.clone();
        rev.reverse();
        let q = empirical_prevalence(&dataset(&rev)).unwrap();
        for a in 0..K {
            prop_assert!((0.0..=1.0).contains(&p.get(a)));
            prop_assert_eq!(p.get(a), q.get(a));
        }
    }

    #[test]
    fn split_conserves_every_stratum(r in rows(), seed in any::<u64>()) {
        let data = dataset(&r);
        let plan = SplitSpec { seed, ..SplitSpec::default() };
        let parts = split_dataset(&data, &plan).unwrap();
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), data.len());
        let total = data.stratum_counts();
        for a in 0..K {
            for y in 0..2 {
                prop_assert_eq!(parts.iter().map(|p| p.stratum_counts()[a][y]).sum::<usize>(), total[a][y]);
            }
        }
    }

    #[test]
    fn resampling_never_fabricates_rows(r in rows(), p0 in 0.05..0.95f64, p1 in 0.05..0.95f64, seed in any::<u64>()) {
        let pool = dataset(&r);
        let table = PrevalenceTable64::new(vec![p0, p1]).unwrap();
        let out = gpps_resample(&pool, &table, 50, seed).unwrap();
        prop_assert_eq!(out.group_sizes(), vec![50, 50]);
        for i in 0..out.len() {
            let found = (0..pool.len()).any(|j| {
                pool.row(j) == out.row(i) && pool.label(j) == out.label(i) && pool.groups()[j] == out.groups()[i]
            });
            prop_assert!(found, "row {} is not in the pool", i);
        }
    }

    #[test]
    fn empirical_acceptance_matches_the_affine_identity(r in rows(), t0 in 0.0..=1.0f64, t1 in 0.0..=1.0f64) {
        let data = dataset(&r);
        let scores = scores_for(&r);
        let rule = ThresholdRule64::new(vec![t0, t1]).unwrap();
        let rates = confusion_rates(&scores, &data, &rule).unwrap();
        let ar = acceptance_rate(&scores, &data, &rule).unwrap();
        let pv = ppv(&scores, &data, &rule).unwrap();
        let pi = empirical_prevalence(&data).unwrap();
        for a in 0..K {
            let point = RatePoint::new(rates.tpr[a], rates.fpr[a]).unwrap();
            prop_assert!((ar[a] - predict_acceptance_rate(pi.get(a), point).unwrap()).abs() <= 1e-12);
            match pv[a] {
                Some(e) => prop_assert!((e - predict_ppv(pi.get(a), point).unwrap()).abs() <= 1e-12),
                None => prop_assert!(ar[a] == 0.0),
            }
        }
    }

    #[test]
    fn predicted_acceptance_is_affine_and_bracketed(r in rate_point(), p in 0.0..=1.0f64, q in 0.0..=1.0f64, l in 0.0..=1.0f64) {
        let f = |x: f64| predict_acceptance_rate(x, r).unwrap();
        prop_assert!((f(l * p + (1.0 - l) * q) - (l * f(p) + (1.0 - l) * f(q))).abs() <= 1e-12);
        let (lo, hi) = (r.tpr.min(r.fpr), r.tpr.max(r.fpr));
        prop_assert!(f(p) >= lo - 1e-15 && f(p) <= hi + 1e-15);
    }

    #[test]
    fn dp_gap_prediction_is_a_difference_of_acceptance(ra in rate_point(), rb in rate_point(), pa in 0.0..=1.0f64, pb in 0.0..=1.0f64) {
        let d = predict_dp_gap(pa, pb, ra, rb).unwrap();
        let e = predict_acceptance_rate(pa, ra).unwrap() - predict_acceptance_rate(pb, rb).unwrap();
        prop_assert!((d - e).abs() <= 1e-15);
    }

    #[test]
    fn correction_round_trips_and_shifts_log_odds(p in 0.001..=0.999f64, s in 0.02..0.98f64, t in 0.02..0.98f64) {
        let src = PrevalenceTable64::new(vec![s]).unwrap();
        let tgt = PrevalenceTable64::new(vec![t]).unwrap();
        let (w1, w0) = correction_weights(&src, &tgt).unwrap().group(0);
        let (b1, b0) = correction_weights(&tgt, &src).unwrap().group(0);
        let c = correct_posterior(p, w1, w0);
        prop_assert!((correct_posterior(c, b1, b0) - p).abs() <= 1e-12);
        prop_assert!((logit(c) - logit(p) - (w1 / w0).ln()).abs() <= 1e-9);
        // monotone in the source posterior
        prop_assert!(correct_posterior((p + 0.0005).min(1.0), w1, w0) >= c);
    }

    #[test]
    fn threshold_search_is_monotone_in_gamma(scores in prop::collection::vec(0.0..1.0f64, 1..300), g in 0.0..=1.0f64, h in 0.0..=1.0f64) {
        let curve = empirical_ar_curve(&scores).unwrap();
        let cfg = TapConfig::<f64>::default();
        let (lo, hi) = (g.min(h), g.max(h));
        let a = threshold_for_ar(&curve, lo, &cfg).unwrap();
        let b = threshold_for_ar(&curve, hi, &cfg).unwrap();
        prop_assert!(a.achieved <= b.achieved);
        prop_assert!(a.threshold >= b.threshold);
        let accepted = scores.iter().filter(|s| **s >= b.threshold).count() as f64 / scores.len() as f64;
        prop_assert_eq!(accepted, b.achieved);
    }

    #[test]
    fn gaps_are_symmetric_and_nonnegative(tpr in prop::collection::vec(0.0..=1.0f64, 3), fpr in prop::collection::vec(0.0..=1.0f64, 3)) {
        let g = eo_gap(&tpr, &fpr);
        let (rt, rf): (Vec<f64>, Vec<f64>) = (tpr.iter().rev().copied().collect(), fpr.iter().rev().copied().collect());
        prop_assert_eq!(g, eo_gap(&rt, &rf));
        prop_assert!(g >= 0.0 && dp_gap(&tpr) >= 0.0);
        prop_assert_eq!(dp_gap(&tpr), dp_gap(&rt));
    }

    #[test]
    fn em_estimates_stay_clipped(scores in prop::collection::vec(0.0..=1.0f64, 1..200), pi in 0.01..0.99f64) {
        let cfg = EstimatorConfig::default();
        let e = em_prevalence(&scores, pi, &cfg).unwrap();
        prop_assert!(e.estimate >= cfg.clip && e.estimate <= 1.0 - cfg.clip);
        prop_assert!(e.iterations <= cfg.em_max_iterations);
    }

    #[test]
    fn label_free_risk_is_a_probability(tpr in prop::collection::vec(0.0..=1.0f64, 2), fpr in prop::collection::vec(0.0..=1.0f64, 2), p in prop::collection::vec(0.0..=1.0f64, 2), w in 0.05..0.95f64) {
        let rates = gpps_core::metrics::GroupRates { tpr, fpr, roc: None };
        let table = PrevalenceTable64::with_marginals(p, vec![w, 1.0 - w]).unwrap();
        let r = label_free_risk(&rates, &table).unwrap();
        prop_assert!((-1e-15..=1.0 + 1e-15).contains(&r));
    }

    #[test]
    fn bound_halves_when_samples_quadruple(n in 1usize..100_000, m in 1usize..100_000, kappa in 0.01..=1.0f64) {
        let b = dp_gap_bound(&BoundInputs::new(vec![n, n], vec![m, m], kappa), 2).unwrap();
        let b4 = dp_gap_bound(&BoundInputs::new(vec![4 * n, 4 * n], vec![4 * m, 4 * m], kappa), 2).unwrap();
        prop_assert!((b - 2.0 * b4).abs() <= 1e-12 * b);
    }
}

#[test]
fn gaussian_sampler_hits_requested_prevalence_exactly() {
    let params = GaussianParams64::default_synthetic();
    let table = PrevalenceTable64::new(vec![0.3, 0.5]).unwrap();
    let data = generate_gaussian(&params, &table, 1000, 5).unwrap();
    let p = empirical_prevalence(&data).unwrap();
    assert_eq!((p.get(0), p.get(1)), (0.3, 0.5));
    let again = generate_gaussian(&params, &table, 1000, 5).unwrap();
    assert_eq!(data, again);
}
