//! Sample statistics for the verification suite: Kolmogorov–Smirnov
//! distances and mean / standard-error summaries.

use crate::error::{BridgeError, Result};

/// One-sample KS statistic `sup_x |F_n(x) − F(x)|` against a reference CDF.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((f - i as f64 / n).abs());
        d = d.max(((i + 1) as f64 / n - f).abs());
    }
    d
}

/// Two-sample KS statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n || j < m {
        let xv = if i < n { xs[i] } else { f64::INFINITY };
        let yv = if j < m { ys[j] } else { f64::INFINITY };
        if xv <= yv {
            i += 1;
        }
        if yv <= xv {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic KS critical coefficient: 1.628 at α=0.01, 1.358 at α=0.05.
pub fn ks_coefficient(alpha: f64) -> Result<f64> {
    if (alpha - 0.01).abs() < 1e-12 {
        Ok(1.628)
    } else if (alpha - 0.05).abs() < 1e-12 {
        Ok(1.358)
    } else {
        Err(BridgeError::param(format!("unsupported KS significance level {alpha}")))
    }
}

/// One-sample critical value `c(α)/√n`; requires `n ≥ 1000` for asymptotics.
pub fn ks_critical(alpha: f64, n: usize) -> Result<f64> {
    if n < 1000 {
        return Err(BridgeError::SampleSize { n, min: 1000 });
    }
    Ok(ks_coefficient(alpha)? / (n as f64).sqrt())
}

/// Two-sample critical value `c(α)·√((n+m)/(nm))`.
pub fn ks_critical_two_sample(alpha: f64, n: usize, m: usize) -> Result<f64> {
    if n < 1000 || m < 1000 {
        return Err(BridgeError::SampleSize { n: n.min(m), min: 1000 });
    }
    Ok(ks_coefficient(alpha)? * ((n + m) as f64 / (n as f64 * m as f64)).sqrt())
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance (unbiased).
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}
