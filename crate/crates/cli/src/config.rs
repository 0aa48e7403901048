//! Experiment configuration: one JSON document, with dotted-path overrides.

use std::path::{Path, PathBuf};

use gpps_core::data::{CsvSchema, GaussianParams};
use gpps_core::models::LogisticConfig;
use gpps_core::tapgpps::TapConfig;
use gpps_core::{GaussianParams64, PrevalenceTable64, SplitSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Gaussian {
        #[serde(default = "GaussianParams::default_synthetic")]
        params: GaussianParams64,
    },
    /// Rows of a CSV file, resampled per stratum to the requested prevalences.
    Csv { path: PathBuf, schema: CsvSchema },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Gaussian {
            params: GaussianParams::default_synthetic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelChoice {
    #[default]
    Logistic,
    /// Exact posterior of the Gaussian source model; needs a Gaussian data source.
    GaussianBayes,
}

/// Straight line of per-group target prevalences from `start` to `end`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrevalenceGrid {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub points: usize,
}

impl Default for PrevalenceGrid {
    fn default() -> Self {
        Self {
            start: vec![0.1, 0.7],
            end: vec![0.7, 0.1],
            points: 13,
        }
    }
}

impl PrevalenceGrid {
    /// `(shift parameter in [0, 1], prevalences)` for each point.
    pub fn points(&self) -> Vec<(f64, Vec<f64>)> {
        let n = self.points;
        (0..n)
            .map(|i| {
                let s = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                let p = self
                    .start
                    .iter()
                    .zip(&self.end)
                    .map(|(a, b)| {
                        let v = a + (b - a) * s;
                        // keep grid values like 0.35 free of representation noise
                        (v * 1e12).round() / 1e12
                    })
                    .collect();
                (s, p)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub impossibility_instances: usize,
    pub bound_trials: usize,
    pub bound_samples: usize,
    /// Margin fed to the bound; measured from the oracle model when absent.
    pub bound_kappa: Option<f64>,
    pub bound_confidence: f64,
    pub bound_c1: f64,
    pub bound_c2: f64,
    /// Largest tolerated share of trials exceeding the bound.
    pub bound_max_exceedance: f64,
    pub correction_pairs: usize,
    pub correction_points: usize,
    pub bisection_curves: usize,
    pub bisection_rows: usize,
    pub risk_rules: usize,
    pub risk_samples: usize,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            impossibility_instances: 1000,
            bound_trials: 200,
            bound_samples: 10_000,
            bound_kappa: None,
            bound_confidence: 0.05,
            bound_c1: 1.0,
            bound_c2: 1.0,
            bound_max_exceedance: 0.08,
            correction_pairs: 10,
            correction_points: 1000,
            bisection_curves: 100,
            bisection_rows: 2000,
            risk_rules: 20,
            risk_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub data: DataSource,
    pub source_prevalence: Vec<f64>,
    pub target_prevalence: Vec<f64>,
    pub prevalence_grid: PrevalenceGrid,
    /// Labeled source rows per group, before the train/validation/test split.
    pub n: usize,
    /// Unlabeled target rows per group.
    pub m: usize,
    pub m_grid: Vec<usize>,
    /// Held-out labeled target rows per group, used only for evaluation.
    pub target_test: usize,
    /// Seeds; each command has its own default when absent.
    pub seeds: Option<Vec<u64>>,
    pub model: ModelChoice,
    pub logistic: LogisticConfig,
    pub calibrate: bool,
    pub calibrate_per_group: bool,
    pub split: SplitSpec,
    /// Fixed thresholds of the drift sweep.
    pub thresholds: Vec<f64>,
    pub tap: TapConfig<f64>,
    pub check: CheckConfig,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: "synthetic".into(),
            data: DataSource::default(),
            source_prevalence: vec![0.3, 0.5],
            target_prevalence: vec![0.5, 0.3],
            prevalence_grid: PrevalenceGrid::default(),
            n: 20_000,
            m: 5_000,
            m_grid: vec![125, 250, 500, 1000, 2000, 4000],
            target_test: 5_000,
            seeds: None,
            model: ModelChoice::Logistic,
            logistic: LogisticConfig::default(),
            calibrate: true,
            calibrate_per_group: false,
            split: SplitSpec::default(),
            thresholds: vec![0.5, 0.5],
            tap: TapConfig::default(),
            check: CheckConfig::default(),
            out: PathBuf::from("out"),
        }
    }
}

fn field(path: &str, msg: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        message: msg.into(),
    }
}

fn check_prevalences(path: &str, p: &[f64], k: usize) -> CliResult<()> {
    if p.len() != k {
        return Err(field(path, format!("expected {k} entries, found {}", p.len())));
    }
    if let Some(v) = p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(field(path, format!("{v} is outside (0, 1)")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_value(serde_json::from_str(&text).map_err(|e| field("<root>", e.to_string()))?)
    }

    pub fn from_value(value: Value) -> CliResult<Self> {
        serde_json::from_value(value).map_err(|e| field("<root>", e.to_string()))
    }

    /// Applies `key=value` overrides; `value` is parsed as JSON, falling back
    /// to a plain string.
    pub fn with_overrides(self, overrides: &[String]) -> CliResult<Self> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut value = serde_json::to_value(&self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| field(item, "override must look like key=value"))?;
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut value, key, parsed)?;
        }
        Self::from_value(value)
    }

    pub fn group_count(&self) -> usize {
        match &self.data {
            DataSource::Gaussian { params } => params.group_count(),
            DataSource::Csv { .. } => self.source_prevalence.len(),
        }
    }

    pub fn seeds_or(&self, default: std::ops::Range<u64>) -> Vec<u64> {
        self.seeds.clone().unwrap_or_else(|| default.collect())
    }

    pub fn source_table(&self) -> PrevalenceTable64 {
        PrevalenceTable64::new(self.source_prevalence.clone()).expect("validated")
    }

    pub fn target_table(&self) -> PrevalenceTable64 {
        PrevalenceTable64::new(self.target_prevalence.clone()).expect("validated")
    }

    /// Validation errors name the offending field by its dotted path.
    pub fn validate(&self) -> CliResult<()> {
        let k = self.group_count();
        if k == 0 {
            return Err(field("source_prevalence", "at least one group is required"));
        }
        check_prevalences("source_prevalence", &self.source_prevalence, k)?;
        check_prevalences("target_prevalence", &self.target_prevalence, k)?;
        check_prevalences("prevalence_grid.start", &self.prevalence_grid.start, k)?;
        check_prevalences("prevalence_grid.end", &self.prevalence_grid.end, k)?;
        if self.prevalence_grid.points == 0 {
            return Err(field("prevalence_grid.points", "must be positive"));
        }
        if let Some(seeds) = &self.seeds {
            if seeds.is_empty() {
                return Err(field("seeds", "must not be empty"));
            }
        }
        for (name, v) in [("n", self.n), ("m", self.m), ("target_test", self.target_test)] {
            if v < 10 {
                return Err(field(name, "must be at least 10"));
            }
        }
        if self.m_grid.is_empty() || self.m_grid.iter().any(|&m| m < 10) {
            return Err(field("m_grid", "must be non-empty with entries of at least 10"));
        }
        if self.thresholds.len() != k || self.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(field("thresholds", format!("expected {k} values in [0, 1]")));
        }
        self.split.validate().map_err(|e| field("split", e.to_string()))?;
        self.tap.validate().map_err(|e| field("tap", e.to_string()))?;
        if !(self.logistic.l2 >= 0.0 && self.logistic.tolerance > 0.0 && self.logistic.max_iterations > 0) {
            return Err(field("logistic", "l2 >= 0, tolerance > 0 and max_iterations > 0 required"));
        }
        if self.model == ModelChoice::GaussianBayes && !matches!(self.data, DataSource::Gaussian { .. }) {
            return Err(field("model", "gaussian-bayes needs a gaussian data source"));
        }
        let c = &self.check;
        if !(c.bound_confidence > 0.0 && c.bound_confidence < 1.0) {
            return Err(field("check.bound_confidence", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&c.bound_max_exceedance) {
            return Err(field("check.bound_max_exceedance", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn set_path(root: &mut Value, key: &str, new: Value) -> CliResult<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        node = match node {
            Value::Object(map) => {
                let slot = map
                    .get_mut(*part)
                    .ok_or_else(|| field(key, format!("unknown configuration key `{part}`")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            Value::Array(items) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| field(key, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(i)
                    .ok_or_else(|| field(key, format!("index {i} out of range (length {len})")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(field(key, format!("`{part}` does not name a nested field"))),
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = ExperimentConfig::default()
            .with_overrides(&[
                "tap.delta=0.1".into(),
                "n=500".into(),
                "source_prevalence.1=0.45".into(),
                "tap.estimator.method=bbse".into(),
                "seeds=[3,4]".into(),
                "out=results".into(),
            ])
            .unwrap();
        assert_eq!(c.tap.delta, 0.1);
        assert_eq!(c.n, 500);
        assert_eq!(c.source_prevalence, vec![0.3, 0.45]);
        assert_eq!(c.tap.estimator.method, gpps_core::shift::EstimatorMethod::Bbse);
        assert_eq!(c.seeds, Some(vec![3, 4]));
        assert_eq!(c.out, PathBuf::from("results"));
    }

    #[test]
    fn bad_overrides_are_rejected() {
        let d = ExperimentConfig::default;
        assert!(d().with_overrides(&["nonsense=1".into()]).is_err());
        assert!(d().with_overrides(&["n".into()]).is_err());
        assert!(d().with_overrides(&["source_prevalence.5=0.1".into()]).is_err());
        assert!(d().with_overrides(&["n=\"many\"".into()]).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let c = ExperimentConfig::default()
            .with_overrides(&["target_prevalence.0=1.5".into()])
            .unwrap();
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("target_prevalence"), "{err}");
        let c = ExperimentConfig::default().with_overrides(&["seeds=[]".into()]).unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("seeds"));
    }

    #[test]
    fn grid_spans_the_endpoints() {
        let pts = PrevalenceGrid::default().points();
        assert_eq!(pts.len(), 13);
        assert_eq!(pts[0].1, vec![0.1, 0.7]);
        assert_eq!(pts[12].1, vec![0.7, 0.1]);
        assert_eq!(pts[6].1, vec![0.4, 0.4]);
        assert_eq!(pts[1].1, vec![0.15, 0.65]);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_value(serde_json::json!({"n": 1000, "tap": {"delta": 0.02}})).unwrap();
        assert_eq!(c.n, 1000);
        assert_eq!(c.tap.delta, 0.02);
        assert_eq!(c.tap.gammas.len(), 101);
        assert_eq!(c.m, 5000);
    }
}
