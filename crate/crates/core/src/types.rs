//! Dataset containers and the small domain types shared by every module.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Index of a demographic group. Groups form the contiguous range `0..group_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupId(pub usize);

impl GroupId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl From<usize> for GroupId {
    fn from(v: usize) -> Self {
        GroupId(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Source,
    Target,
}

/// Anything carrying per-row group membership.
pub trait Grouped {
    fn groups(&self) -> &[GroupId];
    fn group_count(&self) -> usize;

    fn len(&self) -> usize {
        self.groups().len()
    }

    fn is_empty(&self) -> bool {
        self.groups().is_empty()
    }

    /// Row count per group.
    fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.group_count()];
        for g in self.groups() {
            sizes[g.0] += 1;
        }
        sizes
    }

    /// Row indices of every group, in row order.
    fn group_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.group_count()];
        for (i, g) in self.groups().iter().enumerate() {
            out[g.0].push(i);
        }
        out
    }
}

/// Read access to feature rows, shared by labeled and unlabeled datasets.
pub trait FeatureRows<T>: Grouped {
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> &[T];
}

fn validate_rows<T: Scalar>(
    features: &[T],
    dim: usize,
    rows: usize,
    groups: &[GroupId],
    group_count: usize,
) -> Result<()> {
    if group_count == 0 {
        return Err(GppsError::invalid("group_count must be at least 1"));
    }
    if features.len() != rows * dim {
        return Err(GppsError::invalid(format!(
            "feature buffer has {} values, expected {rows} rows x {dim} columns",
            features.len()
        )));
    }
    if groups.len() != rows {
        return Err(GppsError::invalid(format!(
            "{} group entries for {rows} rows",
            groups.len()
        )));
    }
    if let Some(g) = groups.iter().find(|g| g.0 >= group_count) {
        return Err(GppsError::invalid(format!(
            "group id {} outside 0..{group_count}",
            g.0
        )));
    }
    if features.iter().any(|v| !v.is_finite()) {
        return Err(GppsError::invalid("features must be finite"));
    }
    Ok(())
}

/// Feature rows with binary outcomes and group membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LabeledDataset<T> {
    features: Vec<T>,
    dim: usize,
    labels: Vec<bool>,
    groups: Vec<GroupId>,
    group_count: usize,
    domain: DomainTag,
}

impl<T: Scalar> LabeledDataset<T> {
    /// `features` is row-major with `dim` columns.
    pub fn new(
        features: Vec<T>,
        dim: usize,
        labels: Vec<bool>,
        groups: Vec<GroupId>,
        group_count: usize,
        domain: DomainTag,
    ) -> Result<Self> {
        validate_rows(&features, dim, labels.len(), &groups, group_count)?;
        Ok(Self {
            features,
            dim,
            labels,
            groups,
            group_count,
            domain,
        })
    }

    /// Builds from per-row vectors; convenient for small hand-written datasets.
    pub fn from_rows(
        rows: &[Vec<T>],
        labels: &[bool],
        groups: &[usize],
        group_count: usize,
        domain: DomainTag,
    ) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(GppsError::invalid("rows have unequal lengths"));
        }
        Self::new(
            rows.iter().flatten().copied().collect(),
            dim,
            labels.to_vec(),
            groups.iter().map(|&g| GroupId(g)).collect(),
            group_count,
            domain,
        )
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> bool {
        self.labels[i]
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn with_domain(mut self, domain: DomainTag) -> Self {
        self.domain = domain;
        self
    }

    /// Drops the labels.
    pub fn to_unlabeled(&self) -> Result<UnlabeledDataset<T>> {
        UnlabeledDataset::new(
            self.features.clone(),
            self.dim,
            self.groups.clone(),
            self.group_count,
            self.domain,
        )
    }

    /// New dataset made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            features.extend_from_slice(self.row(i));
        }
        Self {
            features,
            dim: self.dim,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: indices.iter().map(|&i| self.groups[i]).collect(),
            group_count: self.group_count,
            domain: self.domain,
        }
    }

    /// Row counts per `(group, label)`; `[group][label as usize]`.
    pub fn stratum_counts(&self) -> Vec<[usize; 2]> {
        let mut counts = vec![[0usize; 2]; self.group_count];
        for (g, &y) in self.groups.iter().zip(&self.labels) {
            counts[g.0][usize::from(y)] += 1;
        }
        counts
    }

    /// Row indices per `(group, label)` stratum.
    pub fn stratum_indices(&self) -> Vec<[Vec<usize>; 2]> {
        let mut out: Vec<[Vec<usize>; 2]> = (0..self.group_count)
            .map(|_| [Vec::new(), Vec::new()])
            .collect();
        for (i, (g, &y)) in self.groups.iter().zip(&self.labels).enumerate() {
            out[g.0][usize::from(y)].push(i);
        }
        out
    }
}

impl<T> Grouped for LabeledDataset<T> {
    fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    fn group_count(&self) -> usize {
        self.group_count
    }
}

impl<T: Scalar> FeatureRows<T> for LabeledDataset<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Feature rows with group membership but no outcomes. Every declared group
/// has at least one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct UnlabeledDataset<T> {
    features: Vec<T>,
    dim: usize,
    groups: Vec<GroupId>,
    group_count: usize,
    domain: DomainTag,
}

impl<T: Scalar> UnlabeledDataset<T> {
    pub fn new(
        features: Vec<T>,
        dim: usize,
        groups: Vec<GroupId>,
        group_count: usize,
        domain: DomainTag,
    ) -> Result<Self> {
        validate_rows(&features, dim, groups.len(), &groups, group_count)?;
        let data = Self {
            features,
            dim,
            groups,
            group_count,
            domain,
        };
        if let Some(group) = data.group_sizes().iter().position(|&n| n == 0) {
            return Err(GppsError::EmptyGroup { group });
        }
        Ok(data)
    }

    pub fn features(&self) -> &[T] {
        &self.features
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }
}

impl<T> Grouped for UnlabeledDataset<T> {
    fn groups(&self) -> &[GroupId] {
        &self.groups
    }

    fn group_count(&self) -> usize {
        self.group_count
    }
}

impl<T: Scalar> FeatureRows<T> for UnlabeledDataset<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[T] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Per-group positive-label probability, optionally with group marginals `P(A=a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PrevalenceTable<T> {
    prevalences: Vec<T>,
    marginals: Option<Vec<T>>,
}

impl<T: Scalar> PrevalenceTable<T> {
    pub fn new(prevalences: Vec<T>) -> Result<Self> {
        if prevalences.is_empty() {
            return Err(GppsError::invalid("prevalence table needs at least one group"));
        }
        if let Some((a, p)) = prevalences
            .iter()
            .enumerate()
            .find(|(_, p)| !(**p >= T::zero() && **p <= T::one()))
        {
            return Err(GppsError::invalid(format!(
                "prevalence of group {a} is {p}, outside [0, 1]"
            )));
        }
        Ok(Self {
            prevalences,
            marginals: None,
        })
    }

    pub fn with_marginals(prevalences: Vec<T>, marginals: Vec<T>) -> Result<Self> {
        let mut table = Self::new(prevalences)?;
        table.set_marginals(marginals)?;
        Ok(table)
    }

    pub fn set_marginals(&mut self, marginals: Vec<T>) -> Result<()> {
        if marginals.len() != self.prevalences.len() {
            return Err(GppsError::invalid(format!(
                "{} marginals for {} groups",
                marginals.len(),
                self.prevalences.len()
            )));
        }
        if marginals.iter().any(|m| !(*m >= T::zero() && *m <= T::one())) {
            return Err(GppsError::invalid("group marginals must lie in [0, 1]"));
        }
        let total: f64 = marginals.iter().map(|m| m.as_f64()).sum();
        // f32 marginals cannot meet 1e-9, so allow a few ulps of the scalar type.
        let tol = 1e-9f64.max(4.0 * T::epsilon().as_f64() * marginals.len() as f64);
        if (total - 1.0).abs() > tol {
            return Err(GppsError::invalid(format!(
                "group marginals sum to {total}, not 1"
            )));
        }
        self.marginals = Some(marginals);
        Ok(())
    }

    pub fn prevalences(&self) -> &[T] {
        &self.prevalences
    }

    pub fn get(&self, group: usize) -> T {
        self.prevalences[group]
    }

    pub fn marginals(&self) -> Option<&[T]> {
        self.marginals.as_deref()
    }

    pub fn group_count(&self) -> usize {
        self.prevalences.len()
    }
}

/// Per-group decision threshold; the classifier accepts when `score >= t_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", transparent)]
pub struct ThresholdRule<T> {
    thresholds: Vec<T>,
}

impl<T: Scalar> ThresholdRule<T> {
    pub fn new(thresholds: Vec<T>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(GppsError::invalid("threshold rule needs at least one group"));
        }
        if thresholds
            .iter()
            .any(|t| !(*t >= T::zero() && *t <= T::one()))
        {
            return Err(GppsError::invalid("thresholds must lie in [0, 1]"));
        }
        Ok(Self { thresholds })
    }

    pub fn uniform(threshold: T, group_count: usize) -> Result<Self> {
        Self::new(vec![threshold; group_count])
    }

    pub fn get(&self, group: usize) -> T {
        self.thresholds[group]
    }

    pub fn thresholds(&self) -> &[T] {
        &self.thresholds
    }

    pub fn group_count(&self) -> usize {
        self.thresholds.len()
    }

    pub fn accepts(&self, score: T, group: GroupId) -> bool {
        score >= self.thresholds[group.0]
    }
}

/// Train/validation/test fractions and the shuffling seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train: 0.6,
            validation: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn new(train: f64, validation: f64, test: f64, seed: u64) -> Result<Self> {
        let plan = Self {
            train,
            validation,
            test,
            seed,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        let fr = [self.train, self.validation, self.test];
        if fr.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(GppsError::invalid("split fractions must be positive"));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(GppsError::invalid("split fractions must sum to 1"));
        }
        Ok(())
    }
}

/// Per-group `P(Y=1 | A=a)` with group row fractions as marginals.
pub fn empirical_prevalence<T: Scalar>(data: &LabeledDataset<T>) -> Result<PrevalenceTable<T>> {
    if data.is_empty() {
        return Err(GppsError::invalid("dataset is empty"));
    }
    let counts = data.stratum_counts();
    let mut prevalences = Vec::with_capacity(counts.len());
    let mut marginals = Vec::with_capacity(counts.len());
    for (group, [neg, pos]) in counts.iter().copied().enumerate() {
        let size = neg + pos;
        if size == 0 {
            return Err(GppsError::EmptyGroup { group });
        }
        prevalences.push(T::ratio(pos, size));
        marginals.push(T::ratio(size, data.len()));
    }
    PrevalenceTable::with_marginals(prevalences, marginals)
}

/// Disjoint stratified train/validation/test split.
///
/// Rows of each `(group, label)` stratum are shuffled; the first
/// `round(s * train)` go to train, the rows up to `round(s * (train + validation))`
/// to validation and the rest to test, with cut points clamped so every split
/// receives at least one row of every non-empty stratum. Split rows keep their
/// original order.
pub fn split_dataset<T: Scalar>(
    data: &LabeledDataset<T>,
    plan: &SplitSpec,
) -> Result<[LabeledDataset<T>; 3]> {
    plan.validate()?;
    if data.is_empty() {
        return Err(GppsError::invalid("dataset is empty"));
    }
    let strata = data.stratum_indices();
    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (group, pair) in strata.iter().enumerate() {
        for (label, members) in pair.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if members.len() < 3 {
                return Err(GppsError::StratumTooSmall {
                    group,
                    label: label as u8,
                    size: members.len(),
                    splits: 3,
                });
            }
            let mut shuffled = members.clone();
            let stratum = (group * 2 + label) as u64;
            shuffled.shuffle(&mut rng::stream(plan.seed, stratum));
            // per-stratum cut points, clamped so each split keeps at least one row
            let size = shuffled.len();
            let first = ((size as f64 * plan.train).round() as usize).clamp(1, size - 2);
            let second = ((size as f64 * (plan.train + plan.validation)).round() as usize).clamp(first + 1, size - 1);
            parts[0].extend_from_slice(&shuffled[..first]);
            parts[1].extend_from_slice(&shuffled[first..second]);
            parts[2].extend_from_slice(&shuffled[second..]);
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }

    Ok(parts.map(|idx| data.select(&idx)))
}

/// Counts `(group, label)` occurrences; used to check that splits are exhaustive.
pub fn stratum_histogram<T: Scalar>(data: &LabeledDataset<T>) -> BTreeMap<(usize, bool), usize> {
    let mut map = BTreeMap::new();
    for (g, &y) in data.groups().iter().zip(data.labels()) {
        *map.entry((g.0, y)).or_insert(0) += 1;
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: &[bool], groups: &[usize], group_count: usize) -> LabeledDataset<f64> {
        let rows: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
        LabeledDataset::from_rows(&rows, labels, groups, group_count, DomainTag::Source).unwrap()
    }

    #[test]
    fn prevalence_single_group_hand_count() {
        let d = toy(&[true, true, false, false], &[0, 0, 0, 0], 1);
        let p = empirical_prevalence(&d).unwrap();
        assert_eq!(p.prevalences(), &[0.5]);
        assert_eq!(p.marginals().unwrap(), &[1.0]);
    }

    #[test]
    fn prevalence_two_groups_hand_count() {
        let d = toy(&[true, false], &[0, 1], 2);
        let p = empirical_prevalence(&d).unwrap();
        assert_eq!(p.prevalences(), &[1.0, 0.0]);
        assert_eq!(p.marginals().unwrap(), &[0.5, 0.5]);
    }

    #[test]
    fn prevalence_all_negative_is_zero() {
        let d = toy(&[false; 5], &[0, 1, 0, 1, 1], 2);
        let p = empirical_prevalence(&d).unwrap();
        assert_eq!(p.prevalences(), &[0.0, 0.0]);
    }

    #[test]
    fn prevalence_names_the_empty_group() {
        let d = toy(&[true, false], &[0, 0], 3);
        match empirical_prevalence(&d) {
            Err(GppsError::EmptyGroup { group }) => assert_eq!(group, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_rejects_mismatched_lengths_and_bad_groups() {
        assert!(LabeledDataset::<f64>::new(vec![0.0; 3], 1, vec![true; 2], vec![GroupId(0); 2], 1, DomainTag::Source).is_err());
        assert!(LabeledDataset::<f64>::new(vec![0.0; 2], 1, vec![true; 2], vec![GroupId(0), GroupId(1)], 1, DomainTag::Source).is_err());
        assert!(UnlabeledDataset::<f64>::new(vec![0.0; 2], 1, vec![GroupId(0); 2], 2, DomainTag::Target).is_err());
    }

    #[test]
    fn marginals_must_sum_to_one() {
        assert!(PrevalenceTable::with_marginals(vec![0.2, 0.3], vec![0.5, 0.6]).is_err());
        assert!(PrevalenceTable::with_marginals(vec![0.2, 0.3], vec![0.4, 0.6]).is_ok());
        assert!(PrevalenceTable::new(vec![1.2f64]).is_err());
    }

    fn hundred_rows() -> LabeledDataset<f64> {
        let labels: Vec<bool> = (0..100).map(|i| i % 5 < 2).collect();
        let groups: Vec<usize> = (0..100).map(|i| (i / 7) % 2).collect();
        toy(&labels, &groups, 2)
    }

    #[test]
    fn split_sizes_and_partition() {
        let d = hundred_rows();
        let plan = SplitSpec::new(0.6, 0.2, 0.2, 7).unwrap();
        let [a, b, c] = split_dataset(&d, &plan).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (60, 20, 20));
        let mut ids: Vec<i64> = a
            .features()
            .iter()
            .chain(b.features())
            .chain(c.features())
            .map(|v| *v as i64)
            .collect();
        ids.sort();
        assert_eq!(ids, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_deterministic() {
        let d = hundred_rows();
        let plan = SplitSpec::new(0.6, 0.2, 0.2, 7).unwrap();
        let first = split_dataset(&d, &plan).unwrap();
        let second = split_dataset(&d, &plan).unwrap();
        assert_eq!(first, second);
        let other = split_dataset(&d, &SplitSpec { seed: 8, ..plan }).unwrap();
        assert_ne!(first[0], other[0]);
    }

    #[test]
    fn split_preserves_stratum_totals_and_prevalence() {
        let d = hundred_rows();
        let splits = split_dataset(&d, &SplitSpec::default()).unwrap();
        let mut total = BTreeMap::new();
        for s in &splits {
            for (k, v) in stratum_histogram(s) {
                *total.entry(k).or_insert(0) += v;
            }
        }
        assert_eq!(total, stratum_histogram(&d));
        let src = d.stratum_counts();
        let fracs = [0.6, 0.2, 0.2];
        for (s, f) in splits.iter().zip(fracs) {
            for (g, pair) in s.stratum_counts().iter().enumerate() {
                for y in 0..2 {
                    let expect = src[g][y] as f64 * f;
                    assert!((pair[y] as f64 - expect).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn split_rejects_tiny_stratum() {
        let mut labels = vec![false; 20];
        labels[3] = true;
        let d = toy(&labels, &[0; 20], 1);
        assert!(matches!(
            split_dataset(&d, &SplitSpec::default()),
            Err(GppsError::StratumTooSmall { size: 1, .. })
        ));
    }

    #[test]
    fn split_rejects_bad_fractions() {
        assert!(SplitSpec::new(0.5, 0.2, 0.2, 0).is_err());
        assert!(SplitSpec::new(1.0, 0.0, 0.0, 0).is_err());
    }
}
