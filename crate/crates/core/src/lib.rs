//! Fairness analysis under group-conditional prior probability shift.
//!
//! When the positive-label prevalence `P(Y=1 | A=a)` moves between a source and a
//! target domain while `P(X | Y, A)` stays fixed, error-rate criteria (equalized
//! odds) carry over unchanged but acceptance-rate and predictive-value criteria
//! drift. This crate provides:
//!
//! * [`metrics`]: empirical groupwise TPR/FPR, acceptance rates, PPV and gap reports,
//! * [`drift`]: closed-form drift predictors and impossibility residuals,
//! * [`shift`]: target prevalence estimation (EM, BBSE) and posterior correction,
//! * [`tapgpps`]: target-aware threshold selection restoring demographic parity,
//! * [`data`] and [`models`]: synthetic generators, CSV ingestion, logistic
//!   regression, temperature scaling and an exact Gaussian posterior.
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`); the
//! `*64`/`*32` aliases below pin the common instantiations.

pub mod data;
pub mod drift;
pub mod error;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod scalar;
pub mod shift;
pub mod tapgpps;
pub mod types;

pub use error::{GppsError, Result};
pub use scalar::Scalar;
pub use types::{
    empirical_prevalence, split_dataset, DomainTag, GroupId, Grouped, LabeledDataset,
    PrevalenceTable, SplitSpec, ThresholdRule, UnlabeledDataset,
};

pub type LabeledDataset64 = types::LabeledDataset<f64>;
pub type LabeledDataset32 = types::LabeledDataset<f32>;
pub type UnlabeledDataset64 = types::UnlabeledDataset<f64>;
pub type UnlabeledDataset32 = types::UnlabeledDataset<f32>;
pub type PrevalenceTable64 = types::PrevalenceTable<f64>;
pub type PrevalenceTable32 = types::PrevalenceTable<f32>;
pub type ThresholdRule64 = types::ThresholdRule<f64>;
pub type ThresholdRule32 = types::ThresholdRule<f32>;
pub type GaussianParams64 = data::GaussianParams<f64>;
pub type GaussianParams32 = data::GaussianParams<f32>;
pub type ScoreModel64 = models::ScoreModel<f64>;
pub type ScoreModel32 = models::ScoreModel<f32>;
pub type GroupRates64 = metrics::GroupRates<f64>;
pub type GapReport64 = metrics::GapReport<f64>;
pub type RatePoint64 = drift::RatePoint<f64>;
pub type RatePoint32 = drift::RatePoint<f32>;
pub type CorrectionWeights64 = shift::CorrectionWeights<f64>;
pub type TapConfig64 = tapgpps::TapConfig<f64>;
pub type FairClassifier64 = tapgpps::FairClassifier<f64>;
