//! Summary statistics over seeds.

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Least-squares slope of `y` on `x`.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    slope(&lx, &ly)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        Self {
            mean: mean(v),
            std: std_dev(v),
            count: v.len(),
        }
    }

    /// Statistics of the defined entries only.
    pub fn of_defined(v: &[Option<f64>]) -> Option<Self> {
        let d: Vec<f64> = v.iter().flatten().copied().collect();
        (!d.is_empty()).then(|| Self::of(&d))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn by_hand() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(std_dev(&[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(std_dev(&[4.0]), 0.0);
        assert!((slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
        let x = [100.0, 400.0, 1600.0];
        let y: Vec<f64> = x.iter().map(|m: &f64| 3.0 / m.sqrt()).collect();
        assert!((log_log_slope(&x, &y) + 0.5).abs() < 1e-12);
        assert_eq!(MeanStd::of_defined(&[None, Some(2.0), Some(4.0)]).unwrap().mean, 3.0);
        assert!(MeanStd::of_defined(&[None]).is_none());
    }
}
