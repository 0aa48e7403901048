//! Closed-form drift of acceptance rate, PPV and DP gap with prevalence, and
//! the residuals behind the shift-robust impossibility results.

use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::scalar::Scalar;

/// Groupwise operating point; invariant under prior shift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RatePoint<T> {
    pub tpr: T,
    pub fpr: T,
}

impl<T: Scalar> RatePoint<T> {
    pub fn new(tpr: T, fpr: T) -> Result<Self> {
        check_probability("tpr", tpr)?;
        check_probability("fpr", fpr)?;
        Ok(Self { tpr, fpr })
    }

    /// Slope of the acceptance rate in prevalence, `tpr - fpr`.
    pub fn delta(&self) -> T {
        self.tpr - self.fpr
    }
}

fn check_probability<T: Scalar>(name: &str, v: T) -> Result<()> {
    if v >= T::zero() && v <= T::one() {
        Ok(())
    } else {
        Err(GppsError::invalid(format!("{name} = {v} is outside [0, 1]")))
    }
}

/// `pi * tpr + (1 - pi) * fpr`, evaluated as `fpr + pi * (tpr - fpr)`.
pub fn predict_acceptance_rate<T: Scalar>(pi: T, rates: RatePoint<T>) -> Result<T> {
    check_probability("prevalence", pi)?;
    Ok(rates.fpr + pi * rates.delta())
}

/// `pi * tpr / (pi * tpr + (1 - pi) * fpr)`.
pub fn predict_ppv<T: Scalar>(pi: T, rates: RatePoint<T>) -> Result<T> {
    let acceptance = predict_acceptance_rate(pi, rates)?;
    if acceptance <= T::zero() {
        return Err(GppsError::Undefined("PPV with zero acceptance".into()));
    }
    Ok(pi * rates.tpr / acceptance)
}

/// Signed `AR_a - AR_b`, written as
/// `pi_a * delta_a - pi_b * delta_b + (fpr_a - fpr_b)`.
pub fn predict_dp_gap<T: Scalar>(pi_a: T, pi_b: T, rates_a: RatePoint<T>, rates_b: RatePoint<T>) -> Result<T> {
    check_probability("prevalence", pi_a)?;
    check_probability("prevalence", pi_b)?;
    Ok(pi_a * rates_a.delta() - pi_b * rates_b.delta() + (rates_a.fpr - rates_b.fpr))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ImpossibilityCase {
    /// `tpr = fpr` in every group: acceptance does not depend on prevalence.
    Uninformative,
    /// The shift lies along the line keeping the DP gap unchanged.
    ConstrainedShift,
    /// DP cannot hold in both regimes.
    Violated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ImpossibilityVerdict<T> {
    pub case: ImpossibilityCase,
    /// `(pi'_0 - pi_0) * delta_0 - (pi'_1 - pi_1) * delta_1`: the change of the
    /// signed DP gap between the two regimes.
    pub residual: T,
    pub tolerance: T,
}

pub const DEFAULT_VERDICT_TOLERANCE: f64 = 1e-9;

/// Classifies a two-group prevalence change for a fixed threshold classifier.
pub fn dp_impossibility_check<T: Scalar>(
    pi: [T; 2],
    pi_prime: [T; 2],
    rates: [RatePoint<T>; 2],
    tolerance: T,
) -> Result<ImpossibilityVerdict<T>> {
    for p in pi.iter().chain(&pi_prime) {
        check_probability("prevalence", *p)?;
    }
    if !(tolerance >= T::zero()) {
        return Err(GppsError::invalid("tolerance must be non-negative"));
    }
    if pi == pi_prime {
        return Err(GppsError::invalid(
            "prevalences are identical in both regimes; no shift to check",
        ));
    }
    let residual = (pi_prime[0] - pi[0]) * rates[0].delta() - (pi_prime[1] - pi[1]) * rates[1].delta();
    let case = if rates.iter().all(|r| r.delta().abs() <= tolerance) {
        ImpossibilityCase::Uninformative
    } else if residual.abs() <= tolerance {
        ImpossibilityCase::ConstrainedShift
    } else {
        ImpossibilityCase::Violated
    };
    Ok(ImpossibilityVerdict {
        case,
        residual,
        tolerance,
    })
}

/// `pi_0 tpr_0 (1 - pi_1) fpr_1 - pi_1 tpr_1 (1 - pi_0) fpr_0`; zero exactly
/// when both groups have the same PPV.
pub fn ppv_parity_residual<T: Scalar>(pi_0: T, pi_1: T, rates_0: RatePoint<T>, rates_1: RatePoint<T>) -> Result<T> {
    check_probability("prevalence", pi_0)?;
    check_probability("prevalence", pi_1)?;
    for r in [rates_0, rates_1] {
        if r.tpr <= T::zero() || r.fpr >= T::one() {
            return Err(GppsError::invalid(
                "classifier is trivial (tpr = 0 or fpr = 1 in some group)",
            ));
        }
    }
    Ok(pi_0 * rates_0.tpr * (T::one() - pi_1) * rates_1.fpr - pi_1 * rates_1.tpr * (T::one() - pi_0) * rates_0.fpr)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rp(tpr: f64, fpr: f64) -> RatePoint<f64> {
        RatePoint::new(tpr, fpr).unwrap()
    }

    #[test]
    fn acceptance_rate_examples() {
        assert!((predict_acceptance_rate(0.5, rp(0.8, 0.2)).unwrap() - 0.5).abs() < 1e-15);
        assert!((predict_acceptance_rate(0.3, rp(0.8, 0.2)).unwrap() - 0.38).abs() < 1e-15);
        for pi in [0.0, 0.2, 0.9, 1.0] {
            assert_eq!(predict_acceptance_rate(pi, rp(0.4, 0.4)).unwrap(), 0.4);
        }
        assert!(predict_acceptance_rate(1.2, rp(0.4, 0.4)).is_err());
    }

    #[test]
    fn ppv_examples() {
        assert!((predict_ppv(0.5, rp(0.8, 0.2)).unwrap() - 0.8).abs() < 1e-15);
        assert!((predict_ppv(0.3, rp(0.8, 0.2)).unwrap() - 0.24 / 0.38).abs() < 1e-15);
        assert!((predict_ppv(0.3, rp(0.8, 0.2)).unwrap() - 0.6316).abs() < 1e-4);
        assert_eq!(predict_ppv(0.37, rp(0.6, 0.0)).unwrap(), 1.0);
        assert!(matches!(predict_ppv(0.0, rp(0.6, 0.0)), Err(GppsError::Undefined(_))));
    }

    #[test]
    fn dp_gap_examples() {
        assert_eq!(predict_dp_gap(0.4, 0.4, rp(0.7, 0.1), rp(0.7, 0.1)).unwrap(), 0.0);
        let g = predict_dp_gap(0.5, 0.3, rp(0.8, 0.2), rp(0.8, 0.2)).unwrap();
        assert!((g - 0.12).abs() < 1e-15);
    }

    #[test]
    fn impossibility_cases_by_hand() {
        let v = dp_impossibility_check([0.3, 0.5], [0.6, 0.1], [rp(0.4, 0.4), rp(0.2, 0.2)], 1e-9).unwrap();
        assert_eq!(v.case, ImpossibilityCase::Uninformative);

        let rates = [rp(0.8, 0.2), rp(0.5, 0.2)];
        let v = dp_impossibility_check([0.3, 0.5], [0.4, 0.7], rates, 1e-9).unwrap();
        assert!(v.residual.abs() < 1e-15);
        assert_eq!(v.case, ImpossibilityCase::ConstrainedShift);

        let v = dp_impossibility_check([0.3, 0.5], [0.5, 0.5], rates, 1e-9).unwrap();
        assert!((v.residual - 0.12).abs() < 1e-15);
        assert_eq!(v.case, ImpossibilityCase::Violated);
    }

    #[test]
    fn impossibility_requires_a_shift() {
        let rates = [rp(0.8, 0.2), rp(0.5, 0.2)];
        assert!(dp_impossibility_check([0.3, 0.5], [0.3, 0.5], rates, 1e-9).is_err());
    }

    #[test]
    fn ppv_residual_examples() {
        assert_eq!(ppv_parity_residual(0.4, 0.4, rp(0.7, 0.2), rp(0.7, 0.2)).unwrap(), 0.0);
        // equal likelihood ratios (4) and equal prevalence
        let r = ppv_parity_residual(0.35, 0.35, rp(0.8, 0.2), rp(0.4, 0.1)).unwrap();
        assert!(r.abs() < 1e-15);
        let r = ppv_parity_residual(0.5, 0.3, rp(0.8, 0.2), rp(0.6, 0.3)).unwrap();
        assert!((r - 0.066).abs() < 1e-15);
        assert!(ppv_parity_residual(0.5, 0.3, rp(0.0, 0.2), rp(0.6, 0.3)).is_err());
        assert!(ppv_parity_residual(0.5, 0.3, rp(0.8, 1.0), rp(0.6, 0.3)).is_err());
    }
}
