//! Adaptive Gauss–Kronrod quadrature.
//!
//! Globally adaptive 15-point Kronrod / 7-point Gauss scheme: the worst
//! segment (largest error estimate) is bisected until the summed error
//! estimate meets `abs_tol` or `rel_tol`. Infinite endpoints are mapped to
//! finite intervals with the usual rational substitutions.

use crate::error::{BridgeError, Result};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

// 15-point Kronrod abscissae (positive half) and weights, 7-point Gauss weights.
const XGK15: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];
const WG7: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];
const WGK15: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evals: usize,
}

/// One non-adaptive Gauss–Kronrod pass over `[a, b]`, for callers that
/// manage their own subdivision. Returns (integral, error estimate).
pub fn gk15_once<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> (f64, f64) {
    gk15(&f, a, b)
}

/// One Gauss–Kronrod pass over `[a, b]`. Returns (integral, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);

    let fc = f(center);
    let mut kronrod = fc * WGK15[7];
    let mut gauss = fc * WG7[3];
    let mut resabs = kronrod.abs();

    let mut fv = [0.0f64; 15];
    fv[7] = fc;
    for (j, &x) in XGK15.iter().enumerate().take(7) {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv[j] = f1;
        fv[14 - j] = f2;
        kronrod += WGK15[j] * (f1 + f2);
        resabs += WGK15[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG7[j / 2] * (f1 + f2);
        }
    }

    let mean = kronrod * 0.5;
    let mut resasc = WGK15[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK15[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }

    let integral = kronrod * half;
    resabs *= half.abs();
    resasc *= half.abs();

    let mut err = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (integral, err)
}

#[derive(Debug)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

const MAX_SEGMENTS: usize = 4096;
const INIT_SEGMENTS: usize = 32;

/// Adaptive integration over a finite interval.
pub fn integrate_finite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    if a == b {
        return Ok(QuadResult { value: 0.0, abs_error: 0.0, evals: 0 });
    }
    if a > b {
        let r = integrate_finite(f, b, a, abs_tol, rel_tol)?;
        return Ok(QuadResult { value: -r.value, ..r });
    }

    // Seed with a uniform split so isolated narrow features are not skipped.
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evals = 0usize;
    for k in 0..INIT_SEGMENTS {
        let sa = a + (b - a) * k as f64 / INIT_SEGMENTS as f64;
        let sb = a + (b - a) * (k + 1) as f64 / INIT_SEGMENTS as f64;
        let (v, e) = gk15(&f, sa, sb);
        evals += 15;
        if v.is_nan() {
            return Err(BridgeError::Quadrature(format!("NaN integrand on [{sa}, {sb}]")));
        }
        total += v;
        total_err += e;
        heap.push(Segment { a: sa, b: sb, value: v, error: e });
    }
    if total.is_infinite() {
        // Overflowing integrals are reported as-is; divergence probes rely on this.
        return Ok(QuadResult { value: total, abs_error: f64::INFINITY, evals });
    }

    while total_err > abs_tol.max(rel_tol * total.abs()) && heap.len() < MAX_SEGMENTS {
        let worst = heap.pop().expect("heap nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval exhausted at machine precision; keep its estimate.
            total_err -= worst.error;
            total += 0.0;
            heap.push(Segment { error: 0.0, ..worst });
            continue;
        }
        let (vl, el) = gk15(&f, worst.a, mid);
        let (vr, er) = gk15(&f, mid, worst.b);
        evals += 30;
        if vl.is_nan() || vr.is_nan() {
            return Err(BridgeError::Quadrature(format!(
                "NaN integrand near [{:.6e}, {:.6e}]",
                worst.a, worst.b
            )));
        }
        total += vl + vr - worst.value;
        total_err += el + er - worst.error;
        if total.is_infinite() {
            return Ok(QuadResult { value: total, abs_error: f64::INFINITY, evals });
        }
        heap.push(Segment { a: worst.a, b: mid, value: vl, error: el });
        heap.push(Segment { a: mid, b: worst.b, value: vr, error: er });
    }

    if total_err > abs_tol.max(rel_tol * total.abs()) * 100.0 {
        return Err(BridgeError::Quadrature(format!(
            "error estimate {total_err:.3e} for integral {total:.6e} on [{a:.3e}, {b:.3e}]"
        )));
    }
    Ok(QuadResult { value: total, abs_error: total_err, evals })
}

/// Adaptive integration where either endpoint may be infinite.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    match (a.is_infinite(), b.is_infinite()) {
        (false, false) => integrate_finite(f, a, b, abs_tol, rel_tol),
        (false, true) => {
            // x = a + u/(1-u), u in [0,1)
            let g = move |u: f64| {
                let d = 1.0 - u;
                if d <= 0.0 {
                    return 0.0;
                }
                f(a + u / d) / (d * d)
            };
            integrate_finite(g, 0.0, 1.0, abs_tol, rel_tol)
        }
        (true, false) => {
            // x = b - u/(1-u), u in [0,1)
            let g = move |u: f64| {
                let d = 1.0 - u;
                if d <= 0.0 {
                    return 0.0;
                }
                f(b - u / d) / (d * d)
            };
            integrate_finite(g, 0.0, 1.0, abs_tol, rel_tol)
        }
        (true, true) => {
            // x = u/(1-u^2), u in (-1,1)
            let g = move |u: f64| {
                let d = 1.0 - u * u;
                if d <= 0.0 {
                    return 0.0;
                }
                f(u / d) * (1.0 + u * u) / (d * d)
            };
            integrate_finite(g, -1.0, 1.0, abs_tol, rel_tol)
        }
    }
}

/// Integration split at known feature locations (peaks of a density, say)
/// before going adaptive; endpoints of `[a, b]` may be infinite.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    let mut pts: Vec<f64> = breaks.iter().copied().filter(|p| *p > a && *p < b).collect();
    pts.sort_by(|u, v| u.partial_cmp(v).unwrap());
    pts.dedup();
    let mut edges = vec![a];
    edges.extend(pts);
    edges.push(b);
    let mut total = 0.0;
    let mut err = 0.0;
    let mut evals = 0;
    for w in edges.windows(2) {
        let r = integrate(&f, w[0], w[1], abs_tol / edges.len() as f64, rel_tol)?;
        total += r.value;
        err += r.abs_error;
        evals += r.evals;
    }
    Ok(QuadResult { value: total, abs_error: err, evals })
}

/// Default tolerances used by the verification quadratures.
pub const ABS_TOL: f64 = 1e-10;
pub const REL_TOL: f64 = 1e-8;

pub fn integrate_default<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> Result<f64> {
    integrate(f, a, b, ABS_TOL, REL_TOL).map(|r| r.value)
}

/// Iterated 2-D tensor quadrature over a finite or infinite box.
pub fn integrate_2d<F: Fn(f64, f64) -> f64 + Sync>(
    f: F,
    x_range: (f64, f64),
    y_range: (f64, f64),
    abs_tol: f64,
    rel_tol: f64,
) -> Result<QuadResult> {
    // Inner integrals run at a tighter tolerance so the outer estimate holds.
    let inner_abs = abs_tol * 0.1;
    let inner_rel = rel_tol * 0.1;
    let outer = integrate(
        |x| {
            integrate(|y| f(x, y), y_range.0, y_range.1, inner_abs, inner_rel)
                .map(|r| r.value)
                .unwrap_or(f64::NAN)
        },
        x_range.0,
        x_range.1,
        abs_tol,
        rel_tol,
    )?;
    Ok(outer)
}
