//! Special functions used by the closed-form transition densities.

/// log Γ(x) for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal log-density.
pub fn normal_log_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// log P(Z > x) for standard normal Z, stable far into the tail.
pub fn log_normal_sf(x: f64) -> f64 {
    if x < -8.0 {
        // 1 − sf(−x) with sf(−x) tiny
        return (-log_normal_sf(-x).exp()).ln_1p();
    }
    if x <= 8.0 {
        return (0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    // asymptotic: sf(x) = φ(x)/x · (1 − 1/x² + 3/x⁴ − 15/x⁶ + ...)
    let inv2 = 1.0 / (x * x);
    let series = 1.0 - inv2 * (1.0 - inv2 * (3.0 - 15.0 * inv2));
    normal_log_pdf(x) - x.ln() + series.ln()
}

fn log_sub_exp(la: f64, lb: f64) -> f64 {
    if lb == f64::NEG_INFINITY {
        return la;
    }
    if la <= lb {
        return f64::NEG_INFINITY;
    }
    la + (-(lb - la).exp()).ln_1p()
}

/// log P(a < Z < b) for standard normal Z.
pub fn log_normal_mass(a: f64, b: f64) -> f64 {
    if !(a < b) {
        return f64::NEG_INFINITY;
    }
    if a >= 0.0 {
        log_sub_exp(log_normal_sf(a), log_normal_sf(b))
    } else if b <= 0.0 {
        log_normal_mass(-b, -a)
    } else {
        let missing = log_normal_sf(b).exp() + log_normal_sf(-a).exp();
        (-missing).ln_1p()
    }
}

/// log I_ν(x): modified Bessel function of the first kind, ν > −1, x ≥ 0.
///
/// Power series summed in log space for moderate arguments; the large-x
/// asymptotic expansion `I_ν(x) ~ e^x/√(2πx)·Σ (−1)^k a_k(ν)/x^k` beyond.
/// Series terms are truncated once they fall 1e−14 below the running sum.
pub fn log_bessel_i(nu: f64, x: f64) -> f64 {
    assert!(nu > -1.0, "order must exceed -1, got {nu}");
    assert!(x >= 0.0, "argument must be nonnegative, got {x}");
    if x == 0.0 {
        // limit of the leading series term
        return if nu == 0.0 {
            0.0
        } else if nu > 0.0 {
            f64::NEG_INFINITY
        } else {
            f64::INFINITY
        };
    }
    if x > 500.0 {
        return log_bessel_i_asymptotic(nu, x);
    }

    // term_k = (2k+ν)·ln(x/2) − lnΓ(k+1) − lnΓ(k+ν+1); peak near k* ≈ x/2.
    let lhalf = (0.5 * x).ln();
    let term = |k: f64| (2.0 * k + nu) * lhalf - ln_gamma(k + 1.0) - ln_gamma(k + nu + 1.0);
    let k_star = (0.5 * (-nu + (nu * nu + x * x).sqrt())).floor().max(0.0);
    let log_max = term(k_star);

    let mut sum = 0.0;
    // ascend from k* and descend below it; both tails decay monotonically
    let mut k = k_star;
    loop {
        let t = (term(k) - log_max).exp();
        sum += t;
        if t < 1e-14 * sum {
            break;
        }
        k += 1.0;
        if k > k_star + 2000.0 {
            break;
        }
    }
    let mut k = k_star - 1.0;
    while k >= 0.0 {
        let t = (term(k) - log_max).exp();
        sum += t;
        if t < 1e-14 * sum {
            break;
        }
        k -= 1.0;
    }
    log_max + sum.ln()
}

fn log_bessel_i_asymptotic(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut sum = 1.0f64;
    let mut term = 1.0f64;
    let mut k = 1.0f64;
    loop {
        let num = mu - (2.0 * k - 1.0).powi(2);
        term *= -num / (8.0 * k * x);
        if term.abs() < 1e-16 * sum.abs() || k > 30.0 {
            break;
        }
        sum += term;
        k += 1.0;
    }
    x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
}

/// Ratio I_{ν+1}(x)/I_ν(x), used by the Bessel log-density gradient.
pub fn bessel_i_ratio(nu: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    (log_bessel_i(nu + 1.0, x) - log_bessel_i(nu, x)).exp()
}
