//! Synthetic Gaussian data under prior shift, stratified resampling and CSV I/O.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{GppsError, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::types::{DomainTag, FeatureRows, GroupId, Grouped, LabeledDataset, PrevalenceTable};

/// Class-conditional Gaussians `X | (Y=y, A=a) ~ N(mean[a][y], covariance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", try_from = "RawGaussianParams<T>", into = "RawGaussianParams<T>")]
pub struct GaussianParams<T> {
    dim: usize,
    /// `means[group][label]`, each of length `dim`.
    means: Vec<[Vec<T>; 2]>,
    /// Row-major `dim x dim`.
    covariance: Vec<T>,
    /// Lower-triangular Cholesky factor of `covariance`, row-major.
    cholesky: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct RawGaussianParams<T> {
    /// `means[group] = [negative_mean, positive_mean]`.
    means: Vec<[Vec<T>; 2]>,
    covariance: Vec<Vec<T>>,
}

impl<T: Scalar> TryFrom<RawGaussianParams<T>> for GaussianParams<T> {
    type Error = GppsError;

    fn try_from(raw: RawGaussianParams<T>) -> Result<Self> {
        GaussianParams::new(raw.means, raw.covariance)
    }
}

impl<T: Scalar> From<GaussianParams<T>> for RawGaussianParams<T> {
    fn from(p: GaussianParams<T>) -> Self {
        RawGaussianParams {
            covariance: p.covariance.chunks(p.dim).map(<[T]>::to_vec).collect(),
            means: p.means,
        }
    }
}

impl<T: Scalar> GaussianParams<T> {
    /// `means[group] = [mean for y=0, mean for y=1]`; `covariance` as rows.
    pub fn new(means: Vec<[Vec<T>; 2]>, covariance: Vec<Vec<T>>) -> Result<Self> {
        let dim = covariance.len();
        if dim == 0 {
            return Err(GppsError::invalid("covariance must be at least 1x1"));
        }
        if covariance.iter().any(|r| r.len() != dim) {
            return Err(GppsError::invalid("covariance must be square"));
        }
        if means.is_empty() {
            return Err(GppsError::invalid("at least one group of means is required"));
        }
        if means.iter().flatten().any(|m| m.len() != dim) {
            return Err(GppsError::invalid(format!("every mean must have dimension {dim}")));
        }
        let covariance: Vec<T> = covariance.into_iter().flatten().collect();
        if covariance.iter().chain(means.iter().flatten().flatten()).any(|v| !v.is_finite()) {
            return Err(GppsError::invalid("parameters must be finite"));
        }
        let sym_tol = 1e-12f64.max(T::epsilon().as_f64());
        for i in 0..dim {
            for j in 0..i {
                let d = (covariance[i * dim + j] - covariance[j * dim + i]).abs().as_f64();
                if d > sym_tol {
                    return Err(GppsError::NotPositiveDefinite(format!(
                        "entries ({i},{j}) and ({j},{i}) differ by {d}"
                    )));
                }
            }
        }
        let cholesky = cholesky(&covariance, dim)?;
        Ok(Self {
            dim,
            means,
            covariance,
            cholesky,
        })
    }

    /// Two-group, two-dimensional model used by the experiments.
    ///
    /// Identity covariance. Within both groups the positive mean sits
    /// `(1.6, 1.6)` from the negative mean; group 1 is translated by
    /// `(0.8, -0.8)`, orthogonal to that direction.
    pub fn default_synthetic() -> Self {
        let l = T::lit;
        Self::new(
            vec![
                [vec![l(0.0), l(0.0)], vec![l(1.6), l(1.6)]],
                [vec![l(0.8), l(-0.8)], vec![l(2.4), l(0.8)]],
            ],
            vec![vec![l(1.0), l(0.0)], vec![l(0.0), l(1.0)]],
        )
        .expect("default parameters are valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_count(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, group: usize, label: bool) -> &[T] {
        &self.means[group][usize::from(label)]
    }

    pub fn covariance(&self) -> &[T] {
        &self.covariance
    }

    /// Solves `covariance * x = rhs` with the stored Cholesky factor.
    pub fn solve(&self, rhs: &[T]) -> Vec<T> {
        let d = self.dim;
        let l = &self.cholesky;
        let mut y = vec![T::zero(); d];
        for i in 0..d {
            let mut s = rhs[i];
            for k in 0..i {
                s = s - l[i * d + k] * y[k];
            }
            y[i] = s / l[i * d + i];
        }
        let mut x = vec![T::zero(); d];
        for i in (0..d).rev() {
            let mut s = y[i];
            for k in i + 1..d {
                s = s - l[k * d + i] * x[k];
            }
            x[i] = s / l[i * d + i];
        }
        x
    }

    /// Mahalanobis separation `|mu1 - mu0|_{Sigma^-1}` between the classes of a group.
    pub fn separation(&self, group: usize) -> T {
        let diff: Vec<T> = self
            .mean(group, true)
            .iter()
            .zip(self.mean(group, false))
            .map(|(a, b)| *a - *b)
            .collect();
        let w = self.solve(&diff);
        dot(&w, &diff).sqrt()
    }

    fn sample_into(&self, rng: &mut rng::Rng, group: usize, label: bool, out: &mut Vec<T>) {
        let d = self.dim;
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let mean = self.mean(group, label);
        for i in 0..d {
            let mut v = mean[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                v = v + self.cholesky[i * d + k] * T::lit(*zk);
            }
            out.push(v);
        }
    }
}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y)
}

fn cholesky<T: Scalar>(a: &[T], d: usize) -> Result<Vec<T>> {
    let mut l = vec![T::zero(); d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s = s - l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if !(s > T::zero()) {
                    return Err(GppsError::NotPositiveDefinite(format!(
                        "pivot {i} is {s}"
                    )));
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Ok(l)
}

/// `round(n * p)` with halves rounded up.
pub fn positive_count<T: Scalar>(n: usize, p: T) -> usize {
    let exact = n as f64 * p.as_f64();
    // Snap values a hair below .5 due to binary representation (e.g. 0.35 * 10).
    let snapped = (exact * 1e9).round() / 1e9;
    ((snapped + 0.5).floor() as usize).min(n)
}

/// Draws `n_per_group` rows per group with exactly `round(n * pi_a)` positives.
///
/// Group `a` draws from `rng::stream(seed, a)`, so adding groups or changing one
/// group's prevalence leaves the other groups' streams untouched. Within a group
/// the positives come first.
pub fn generate_gaussian<T: Scalar>(
    params: &GaussianParams<T>,
    prevalences: &PrevalenceTable<T>,
    n_per_group: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    let k = params.group_count();
    if prevalences.group_count() != k {
        return Err(GppsError::invalid(format!(
            "{} prevalences for {k} groups",
            prevalences.group_count()
        )));
    }
    if n_per_group == 0 {
        return Err(GppsError::invalid("n_per_group must be at least 1"));
    }
    let mut features = Vec::with_capacity(k * n_per_group * params.dim());
    let mut labels = Vec::with_capacity(k * n_per_group);
    let mut groups = Vec::with_capacity(k * n_per_group);
    for a in 0..k {
        let n_pos = positive_count(n_per_group, prevalences.get(a));
        let mut rng = rng::stream(seed, a as u64);
        for i in 0..n_per_group {
            let y = i < n_pos;
            params.sample_into(&mut rng, a, y, &mut features);
            labels.push(y);
            groups.push(GroupId(a));
        }
    }
    LabeledDataset::new(features, params.dim(), labels, groups, k, DomainTag::Source)
}

/// Resamples with replacement within each `(group, label)` stratum so that each
/// group has `n_per_group` rows and prevalence `round(n * pi'_a) / n`.
///
/// Feature vectors are copied from the input; none are synthesized.
pub fn gpps_resample<T: Scalar>(
    data: &LabeledDataset<T>,
    target: &PrevalenceTable<T>,
    n_per_group: usize,
    seed: u64,
) -> Result<LabeledDataset<T>> {
    let k = data.group_count();
    if target.group_count() != k {
        return Err(GppsError::invalid(format!(
            "{} target prevalences for {k} groups",
            target.group_count()
        )));
    }
    let strata = data.stratum_indices();
    let mut picked = Vec::with_capacity(k * n_per_group);
    for (a, pair) in strata.iter().enumerate() {
        let n_pos = positive_count(n_per_group, target.get(a));
        let mut rng = rng::stream(seed, a as u64);
        for (label, count) in [(1usize, n_pos), (0usize, n_per_group - n_pos)] {
            if count == 0 {
                continue;
            }
            let pool = &pair[label];
            if pool.is_empty() {
                return Err(GppsError::EmptyStratum {
                    group: a,
                    label: label as u8,
                });
            }
            picked.extend((0..count).map(|_| pool[rng.random_range(0..pool.len())]));
        }
    }
    Ok(data.select(&picked))
}

/// Column reference by header name or 0-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl std::fmt::Display for ColumnRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ColumnRef::Index(i) => write!(f, "#{i}"),
            ColumnRef::Name(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label: ColumnRef,
    pub group: ColumnRef,
    pub features: Vec<ColumnRef>,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
    /// A header row is required whenever any column is referenced by name.
    #[serde(default = "default_true")]
    pub has_header: bool,
}

fn default_delimiter() -> char {
    ','
}

fn default_true() -> bool {
    true
}

impl CsvSchema {
    /// Schema of files written by [`write_csv`]: `x0..x{d-1},label,group`.
    pub fn generated(dim: usize) -> Self {
        Self {
            label: ColumnRef::Name("label".into()),
            group: ColumnRef::Name("group".into()),
            features: (0..dim).map(|i| ColumnRef::Name(format!("x{i}"))).collect(),
            delimiter: ',',
            has_header: true,
        }
    }
}

/// Loaded CSV plus the raw group values in `GroupId` order (first appearance).
#[derive(Debug, Clone)]
pub struct CsvDataset<T> {
    pub data: LabeledDataset<T>,
    pub group_values: Vec<String>,
}

pub fn load_csv<T: Scalar>(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CsvDataset<T>> {
    read_csv(std::fs::File::open(path)?, schema)
}

pub fn read_csv<T: Scalar, R: Read>(reader: R, schema: &CsvSchema) -> Result<CsvDataset<T>> {
    if !schema.delimiter.is_ascii() {
        return Err(GppsError::invalid("delimiter must be an ASCII character"));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .from_reader(reader);
    let headers: Option<Vec<String>> = if schema.has_header {
        Some(rdr.headers()?.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let resolve = |c: &ColumnRef| -> Result<usize> {
        match (c, &headers) {
            (ColumnRef::Index(i), _) => Ok(*i),
            (ColumnRef::Name(n), Some(h)) => h
                .iter()
                .position(|x| x == n)
                .ok_or_else(|| GppsError::invalid(format!("column {n:?} not in header"))),
            (ColumnRef::Name(n), None) => Err(GppsError::invalid(format!(
                "column {n:?} referenced by name but the file has no header"
            ))),
        }
    };
    let label_col = resolve(&schema.label)?;
    let group_col = resolve(&schema.group)?;
    let feature_cols: Vec<usize> = schema.features.iter().map(resolve).collect::<Result<_>>()?;
    if feature_cols.contains(&label_col) || feature_cols.contains(&group_col) || label_col == group_col {
        return Err(GppsError::invalid(
            "label, group and feature columns must be distinct",
        ));
    }
    let col_name = |i: usize| -> String {
        headers
            .as_ref()
            .and_then(|h| h.get(i).cloned())
            .unwrap_or_else(|| format!("#{i}"))
    };

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    let mut group_values: Vec<String> = Vec::new();
    let mut group_map: HashMap<String, usize> = HashMap::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let cell = |c: usize| -> Result<&str> {
            record.get(c).map(str::trim).ok_or_else(|| GppsError::CsvParse {
                row,
                column: col_name(c),
                message: "missing cell".into(),
            })
        };
        for &c in &feature_cols {
            let raw = cell(c)?;
            let v: f64 = raw.parse().map_err(|_| GppsError::CsvParse {
                row,
                column: col_name(c),
                message: format!("{raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(GppsError::CsvParse {
                    row,
                    column: col_name(c),
                    message: format!("{raw:?} is not finite"),
                });
            }
            features.push(T::lit(v));
        }
        let raw = cell(label_col)?;
        labels.push(match raw {
            "0" => false,
            "1" => true,
            _ => {
                return Err(GppsError::CsvParse {
                    row,
                    column: col_name(label_col),
                    message: format!("label {raw:?} is not 0 or 1"),
                })
            }
        });
        let raw = cell(group_col)?;
        let next = group_map.len();
        let id = *group_map.entry(raw.to_owned()).or_insert_with(|| {
            group_values.push(raw.to_owned());
            next
        });
        groups.push(GroupId(id));
    }
    if labels.is_empty() {
        return Err(GppsError::invalid("csv file has no data rows"));
    }
    let data = LabeledDataset::new(
        features,
        feature_cols.len(),
        labels,
        groups,
        group_values.len(),
        DomainTag::Source,
    )?;
    Ok(CsvDataset { data, group_values })
}

/// Writes `x0..x{d-1},label,group` with a header row.
pub fn write_csv<T: Scalar, W: Write>(data: &LabeledDataset<T>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    header.push("group".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut rec: Vec<String> = data.row(i).iter().map(|v| format!("{v}")).collect();
        rec.push(u8::from(data.label(i)).to_string());
        rec.push(data.groups()[i].0.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::empirical_prevalence;

    fn table(p: &[f64]) -> PrevalenceTable<f64> {
        PrevalenceTable::new(p.to_vec()).unwrap()
    }

    #[test]
    fn rejects_non_positive_definite_covariance() {
        let bad = GaussianParams::<f64>::new(
            vec![[vec![0.0, 0.0], vec![1.0, 1.0]]],
            vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        );
        assert!(matches!(bad, Err(GppsError::NotPositiveDefinite(_))));
        let asym = GaussianParams::<f64>::new(
            vec![[vec![0.0, 0.0], vec![1.0, 1.0]]],
            vec![vec![1.0, 0.1], vec![0.0, 1.0]],
        );
        assert!(asym.is_err());
    }

    #[test]
    fn solve_inverts_covariance() {
        let p = GaussianParams::<f64>::new(
            vec![[vec![0.0, 0.0], vec![1.0, 1.0]]],
            vec![vec![2.0, 0.5], vec![0.5, 1.0]],
        )
        .unwrap();
        let x = p.solve(&[1.0, 2.0]);
        assert!((2.0 * x[0] + 0.5 * x[1] - 1.0).abs() < 1e-12);
        assert!((0.5 * x[0] + 1.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_prevalence_gives_all_negative_group() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.0, 0.5]), 50, 1).unwrap();
        let counts = d.stratum_counts();
        assert_eq!(counts[0], [50, 0]);
        assert_eq!(counts[1], [25, 25]);
    }

    #[test]
    fn generated_prevalence_is_exact() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.3, 0.5]), 10_000, 3).unwrap();
        let pi = empirical_prevalence(&d).unwrap();
        assert_eq!(pi.prevalences(), &[0.3, 0.5]);
    }

    #[test]
    fn positive_count_rounds_half_up() {
        assert_eq!(positive_count(10, 0.35f64), 4);
        assert_eq!(positive_count(10, 0.25f64), 3);
        assert_eq!(positive_count(3, 0.5f64), 2);
        assert_eq!(positive_count(7, 1.0f64), 7);
    }

    #[test]
    fn resample_counts_follow_target() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.3, 0.3]), 1000, 5).unwrap();
        let r = gpps_resample(&d, &table(&[0.7, 0.3]), 1000, 9).unwrap();
        let c = r.stratum_counts();
        assert_eq!(c[0], [300, 700]);
        assert_eq!(c[1], [700, 300]);
    }

    #[test]
    fn resample_identity_target_matches_source_counts() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.3, 0.6]), 500, 5).unwrap();
        let pi = empirical_prevalence(&d).unwrap();
        let r = gpps_resample(&d, &PrevalenceTable::new(pi.prevalences().to_vec()).unwrap(), 500, 2).unwrap();
        assert_eq!(r.stratum_counts(), d.stratum_counts());
    }

    #[test]
    fn resample_names_empty_stratum() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.0, 0.5]), 100, 5).unwrap();
        match gpps_resample(&d, &table(&[0.2, 0.5]), 100, 1) {
            Err(GppsError::EmptyStratum { group: 0, label: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_happy_path_and_group_mapping() {
        let text = "a,b,y,sex\n1.0,2.0,1,M\n0.5,-1,0,F\n3,4,1,M\n";
        let schema = CsvSchema {
            label: ColumnRef::Name("y".into()),
            group: ColumnRef::Name("sex".into()),
            features: vec![ColumnRef::Name("a".into()), ColumnRef::Index(1)],
            delimiter: ',',
            has_header: true,
        };
        let out = read_csv::<f64, _>(text.as_bytes(), &schema).unwrap();
        assert_eq!(out.data.len(), 3);
        assert_eq!(out.group_values, vec!["M".to_string(), "F".to_string()]);
        assert_eq!(out.data.groups(), &[GroupId(0), GroupId(1), GroupId(0)]);
        assert_eq!(out.data.row(1), &[0.5, -1.0]);
        assert_eq!(out.data.labels(), &[true, false, true]);
    }

    #[test]
    fn csv_bad_label_cites_row() {
        let text = "x,y,g\n1,0,a\n1,1,a\n1,0,b\n1,1,b\n1,2,a\n";
        let schema = CsvSchema {
            label: ColumnRef::Name("y".into()),
            group: ColumnRef::Name("g".into()),
            features: vec![ColumnRef::Name("x".into())],
            delimiter: ',',
            has_header: true,
        };
        match read_csv::<f64, _>(text.as_bytes(), &schema) {
            Err(GppsError::CsvParse { row, column, .. }) => {
                assert_eq!(row, 5);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_feature_cites_location() {
        let text = "x;y;g\n1;0;a\nfoo;1;a\n";
        let schema = CsvSchema {
            label: ColumnRef::Index(1),
            group: ColumnRef::Index(2),
            features: vec![ColumnRef::Index(0)],
            delimiter: ';',
            has_header: true,
        };
        let err = read_csv::<f64, _>(text.as_bytes(), &schema).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn csv_write_then_read_round_trips() {
        let p = GaussianParams::<f64>::default_synthetic();
        let d = generate_gaussian(&p, &table(&[0.3, 0.5]), 20, 4).unwrap();
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv::<f64, _>(buf.as_slice(), &CsvSchema::generated(2)).unwrap();
        assert_eq!(back.data.features(), d.features());
        assert_eq!(back.data.labels(), d.labels());
        assert_eq!(back.data.groups(), d.groups());
    }

    #[test]
    fn params_round_trip_through_json() {
        let p = GaussianParams::<f64>::default_synthetic();
        let s = serde_json::to_string(&p).unwrap();
        let back: GaussianParams<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
        assert!(serde_json::from_str::<GaussianParams<f64>>(
            r#"{"means":[[[0],[1]]],"covariance":[[-1]]}"#
        )
        .is_err());
    }
}
