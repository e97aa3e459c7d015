//! Small statistics kit: replica means, regressions, goodness-of-fit.

use serde::Serialize;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
}

impl MCEstimate {
    /// Mean and standard error of samples, accumulated in slice order.
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            f64::NAN
        };
        Self { mean, stderr: (var / n as f64).sqrt(), replicas: n }
    }

    pub fn scaled(self, c: f64) -> Self {
        Self { mean: self.mean * c, stderr: self.stderr * c.abs(), replicas: self.replicas }
    }

    pub fn rel_stderr(&self) -> f64 {
        self.stderr / self.mean.abs()
    }

    pub fn z_score(&self, target: f64) -> f64 {
        (self.mean - target) / self.stderr
    }
}

/// Ordinary least squares fit `y = intercept + slope x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    weighted_linear_fit(x, y, &vec![1.0; x.len()])
}

/// Weighted least squares with weights `w_i` (inverse variances).
pub fn weighted_linear_fit(x: &[f64], y: &[f64], w: &[f64]) -> LinearFit {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - mx).powi(2);
        sxy += w[i] * (x[i] - mx) * (y[i] - my);
        syy += w[i] * (y[i] - my).powi(2);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = (0..x.len()).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let r_squared = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    let dof = x.len() as f64 - 2.0;
    let slope_stderr = if dof > 0.0 { (ss_res / dof / sxx).sqrt() } else { f64::NAN };
    LinearFit { slope, intercept, r_squared, slope_stderr }
}

/// Kolmogorov–Smirnov statistic of samples against a CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at the 1% level.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Pearson chi-square statistic of observed counts against expected counts.
pub fn chi_square(observed: &[u64], expected: &[f64]) -> f64 {
    observed.iter().zip(expected).map(|(&o, &e)| (o as f64 - e).powi(2) / e).sum()
}

/// Upper 1% quantile of the chi-square law (Wilson–Hilferty).
pub fn chi_square_critical_1pct(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 2.326_347_874_040_841;
    let a = 2.0 / (9.0 * k);
    k * (1.0 - a + z * a.sqrt()).powi(3)
}
