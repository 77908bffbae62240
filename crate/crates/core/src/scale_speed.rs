//! 1-D diffusion toolbox: scale function, speed measure, and Feller
//! boundary classification.
//!
//! The scale function is `s(x) = ∫_c^x exp(−2∫_c^y b/a dζ) dy`. Endpoint
//! classification evaluates the two Feller test integrals
//! `u = ∫ m((c,x)) s'(x) dx` and `v = ∫ |s(x)| m'(x) dx` on doubling (or, at
//! a finite endpoint, halving) truncations. Divergence detection is a
//! budget-bounded heuristic and is reported as evidence, not proof. All
//! accumulation runs in log space so integrands like `e^{x²}` stay
//! representable far past the double-precision overflow point.

use crate::diffusion::DiffusionSpec;
use crate::error::{BridgeError, Result};
use crate::quad;
use serde::Serialize;

// 5-point Gauss-Legendre on [-1,1]
const G5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const G5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];

fn gauss5<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    G5_X.iter().zip(&G5_W).map(|(&x, &w)| w * f(mid + half * x)).sum::<f64>() * half
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Scale function of a 1-D diffusion, anchored at `s(c) = 0`.
pub struct ScaleFunction {
    pub spec: DiffusionSpec,
    pub c: f64,
    cache: Option<ScaleTable>,
}

struct ScaleTable {
    nodes: Vec<f64>,
    s: Vec<f64>,
    /// exponent G(x) = ∫_c^x b/a, so s'(x) = e^{-2G(x)}
    g: Vec<f64>,
    /// slopes of G at the nodes (= b/a there)
    g_slope: Vec<f64>,
    /// Fritsch–Carlson-limited slopes of s at the nodes
    s_slope: Vec<f64>,
}

pub const SCALE_TABLE_SIZE: usize = 4096;

impl ScaleFunction {
    pub fn new(spec: DiffusionSpec, c: f64) -> Result<Self> {
        if spec.dim != 1 {
            return Err(BridgeError::param("scale function requires a 1-D diffusion"));
        }
        if !spec.domain.is_interior(&[c]) {
            return Err(BridgeError::param(format!("reference point c={c} not in the interior")));
        }
        Ok(ScaleFunction { spec, c, cache: None })
    }

    /// Build with a tabulated cache over `[lo, hi]` for hot-loop evaluation.
    pub fn with_cache(spec: DiffusionSpec, c: f64, lo: f64, hi: f64) -> Result<Self> {
        let mut sf = ScaleFunction::new(spec, c)?;
        sf.build_cache(lo, hi)?;
        Ok(sf)
    }

    fn drift_over_a(&self, y: f64) -> f64 {
        let b = self.spec.drift(0.0, &[y])[0];
        let a = self.spec.a_scalar(0.0, y);
        b / a
    }

    /// `G(y) = ∫_c^y b/a dζ`, adaptive; a non-finite value means b/a is not
    /// locally integrable on the way to `y`.
    fn exponent(&self, y: f64) -> Result<f64> {
        let r = quad::integrate(|z| self.drift_over_a(z), self.c, y, 1e-12, 1e-10)
            .map_err(|e| BridgeError::Integrability(format!("inner exponent integral at y={y}: {e}")))?;
        if !r.value.is_finite() {
            return Err(BridgeError::Integrability(format!(
                "b/a is not integrable between c={} and y={y}",
                self.c
            )));
        }
        Ok(r.value)
    }

    pub fn log_s_prime(&self, y: f64) -> Result<f64> {
        Ok(-2.0 * self.exponent(y)?)
    }

    /// `s'(y) = exp(−2∫_c^y b/a)`.
    pub fn s_prime(&self, y: f64) -> Result<f64> {
        Ok(self.log_s_prime(y)?.exp())
    }

    /// `s(x)` by nested adaptive quadrature (relative error target 1e−8).
    pub fn scale(&self, x: f64) -> Result<f64> {
        if !self.spec.domain.is_interior(&[x]) {
            return Err(BridgeError::Domain {
                state: vec![x],
                lower: self.spec.domain.lower.clone(),
            });
        }
        let r = quad::integrate(
            |y| self.log_s_prime(y).map(f64::exp).unwrap_or(f64::NAN),
            self.c,
            x,
            1e-13,
            1e-9,
        )
        .map_err(|e| BridgeError::Integrability(format!("scale integral to x={x}: {e}")))?;
        Ok(r.value)
    }

    /// Cache-backed evaluation; falls back to the quadrature path outside
    /// the tabulated range. Interpolation error is ~1e−6 relative, an order
    /// looser than `scale`.
    pub fn scale_cached(&self, x: f64) -> Result<f64> {
        if let Some(tab) = &self.cache {
            if let Some(v) = tab.eval_s(x) {
                return Ok(v);
            }
        }
        self.scale(x)
    }

    pub fn s_prime_cached(&self, x: f64) -> Result<f64> {
        if let Some(tab) = &self.cache {
            if let Some(g) = tab.eval_g(x) {
                return Ok((-2.0 * g).exp());
            }
        }
        self.s_prime(x)
    }

    fn build_cache(&mut self, lo: f64, hi: f64) -> Result<()> {
        if !(lo < hi) || !self.spec.domain.is_interior(&[lo]) {
            return Err(BridgeError::param("cache range must be an interior interval"));
        }
        let n = SCALE_TABLE_SIZE;
        let lower = self.spec.domain.lower[0];
        // log-spaced toward a finite lower boundary, sinh-spaced otherwise
        let nodes: Vec<f64> = if lower.is_finite() {
            let (la, lb) = ((lo - lower).ln(), (hi - lower).ln());
            (0..n)
                .map(|i| lower + (la + (lb - la) * i as f64 / (n - 1) as f64).exp())
                .collect()
        } else {
            let (ua, ub) = ((lo - self.c).asinh(), (hi - self.c).asinh());
            (0..n)
                .map(|i| self.c + (ua + (ub - ua) * i as f64 / (n - 1) as f64).sinh())
                .collect()
        };

        // cumulative exponent and scale along the node chain, anchored at c;
        // G is advanced over half-panels so s' is exact at panel midpoints
        // and Simpson keeps the cumulative error from drifting
        let mut g = vec![0.0; n];
        let mut s = vec![0.0; n];
        g[0] = self.exponent(nodes[0])?;
        s[0] = self.scale(nodes[0])?;
        for i in 1..n {
            let (x0, x1) = (nodes[i - 1], nodes[i]);
            let mid = 0.5 * (x0 + x1);
            let g_mid = g[i - 1] + gauss5(&|z| self.drift_over_a(z), x0, mid);
            g[i] = g_mid + gauss5(&|z| self.drift_over_a(z), mid, x1);
            let (sp0, sp_mid, sp1) =
                ((-2.0 * g[i - 1]).exp(), (-2.0 * g_mid).exp(), (-2.0 * g[i]).exp());
            s[i] = s[i - 1] + (x1 - x0) / 6.0 * (sp0 + 4.0 * sp_mid + sp1);
        }

        let g_slope: Vec<f64> = nodes.iter().map(|&x| self.drift_over_a(x)).collect();
        let s_prime: Vec<f64> = g.iter().map(|&gi| (-2.0 * gi).exp()).collect();
        let s_slope = fritsch_carlson(&nodes, &s, &s_prime);
        self.cache = Some(ScaleTable { nodes, s, g, g_slope, s_slope });
        Ok(())
    }
}

/// Limit Hermite slopes so the monotone data stays monotone under cubic
/// interpolation (Fritsch–Carlson condition).
fn fritsch_carlson(x: &[f64], y: &[f64], slopes: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut d = slopes.to_vec();
    for i in 0..n - 1 {
        let h = x[i + 1] - x[i];
        let delta = (y[i + 1] - y[i]) / h;
        if delta == 0.0 {
            d[i] = 0.0;
            d[i + 1] = 0.0;
            continue;
        }
        let alpha = d[i] / delta;
        let beta = d[i + 1] / delta;
        let r = alpha * alpha + beta * beta;
        if r > 9.0 {
            let t = 3.0 / r.sqrt();
            d[i] = t * alpha * delta;
            d[i + 1] = t * beta * delta;
        }
    }
    d
}

fn hermite(x: f64, x0: f64, x1: f64, y0: f64, y1: f64, d0: f64, d1: f64) -> f64 {
    let h = x1 - x0;
    let t = (x - x0) / h;
    let t2 = t * t;
    let t3 = t2 * t;
    y0 * (2.0 * t3 - 3.0 * t2 + 1.0)
        + h * d0 * (t3 - 2.0 * t2 + t)
        + y1 * (-2.0 * t3 + 3.0 * t2)
        + h * d1 * (t3 - t2)
}

impl ScaleTable {
    fn locate(&self, x: f64) -> Option<usize> {
        if x < self.nodes[0] || x > *self.nodes.last().unwrap() {
            return None;
        }
        let i = self.nodes.partition_point(|&n| n <= x);
        Some(i.clamp(1, self.nodes.len() - 1) - 1)
    }

    fn eval_s(&self, x: f64) -> Option<f64> {
        let i = self.locate(x)?;
        Some(hermite(
            x,
            self.nodes[i],
            self.nodes[i + 1],
            self.s[i],
            self.s[i + 1],
            self.s_slope[i],
            self.s_slope[i + 1],
        ))
    }

    fn eval_g(&self, x: f64) -> Option<f64> {
        let i = self.locate(x)?;
        Some(hermite(
            x,
            self.nodes[i],
            self.nodes[i + 1],
            self.g[i],
            self.g[i + 1],
            self.g_slope[i],
            self.g_slope[i + 1],
        ))
    }
}

/// Speed-measure density `m'(x) = 2/(a(x) s'(x))`.
pub struct SpeedDensity {
    pub scale: ScaleFunction,
}

impl SpeedDensity {
    pub fn new(scale: ScaleFunction) -> Self {
        SpeedDensity { scale }
    }

    pub fn density(&self, x: f64) -> Result<f64> {
        let a = self.scale.spec.a_scalar(0.0, x);
        Ok(2.0 / (a * self.scale.s_prime(x)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryClass {
    Regular,
    Exit,
    Entrance,
    Natural,
}

/// One Feller test integral on the truncation sequence.
#[derive(Debug, Clone, Serialize)]
pub struct FellerIntegral {
    pub diverges: bool,
    /// limit value when convergent
    pub value: Option<f64>,
    /// natural log of the partial integrals over the truncations
    pub log_partials: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryReport {
    pub endpoint: Endpoint,
    pub classification: BoundaryClass,
    pub inaccessible: bool,
    /// `∫ m((c,x)) s'(x) dx` toward the endpoint
    pub speed_against_scale: FellerIntegral,
    /// `∫ |s(x)| m'(x) dx` toward the endpoint
    pub scale_against_speed: FellerIntegral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Verdict {
    Converged,
    Diverged,
}

struct TailTracker {
    log_partials: Vec<f64>,
    verdict: Option<Verdict>,
}

const CONV_REL: f64 = 1e-10;
const DIV_GROWTH: f64 = 1.1;

impl TailTracker {
    fn new() -> Self {
        TailTracker { log_partials: Vec::new(), verdict: None }
    }

    fn push(&mut self, log_p: f64) {
        self.log_partials.push(log_p);
        if self.verdict.is_some() {
            return;
        }
        let p = &self.log_partials;
        let n = p.len();
        if n < 3 {
            return;
        }
        let log_inc = |j: usize| -> f64 {
            // ln(P_j − P_{j−1}) from the log partials
            if p[j] <= p[j - 1] {
                f64::NEG_INFINITY
            } else {
                p[j] + (-(p[j - 1] - p[j]).exp()).ln_1p()
            }
        };
        // convergence: two consecutive relative increments below 1e−10
        let rel = |j: usize| log_inc(j) - p[j];
        if rel(n - 1) < CONV_REL.ln() && rel(n - 2) < CONV_REL.ln() {
            self.verdict = Some(Verdict::Converged);
            return;
        }
        if n < 4 {
            return;
        }
        // strong divergence: three consecutive ≥10% growths of the partials
        if (n - 3..n).all(|j| p[j] - p[j - 1] >= DIV_GROWTH.ln()) {
            self.verdict = Some(Verdict::Diverged);
            return;
        }
        // flat divergence: sustained non-decaying increments (log-type growth)
        let flat = (n - 2..n).all(|j| log_inc(j) >= log_inc(j - 1) + 0.8f64.ln())
            && log_inc(n - 1) >= p[n - 1] + 1e-4f64.ln();
        if flat {
            self.verdict = Some(Verdict::Diverged);
        }
    }

    fn into_integral(self) -> FellerIntegral {
        let diverges = self.verdict == Some(Verdict::Diverged);
        let value = if self.verdict == Some(Verdict::Converged) {
            self.log_partials.last().map(|lp| lp.exp())
        } else {
            None
        };
        FellerIntegral { diverges, value, log_partials: self.log_partials }
    }
}

const PANELS_MAX: usize = 80;
const STEPS_PER_PANEL: usize = 64;

/// March both Feller integrals outward from `c` toward the endpoint,
/// tracking everything in log space.
fn feller_march(spec: &DiffusionSpec, c: f64, endpoint: Endpoint) -> Result<(TailTracker, TailTracker)> {
    let lower = spec.domain.lower[0];
    let drift_over_a = |y: f64| spec.drift(0.0, &[y])[0] / spec.a_scalar(0.0, y);

    // panel boundaries: doubling offsets from c toward an infinite endpoint,
    // halving distances toward a finite one
    let x_at = |k: usize| -> f64 {
        match endpoint {
            Endpoint::Upper => {
                if k == 0 {
                    c
                } else {
                    c + 2f64.powi(k as i32 - 1)
                }
            }
            Endpoint::Lower => {
                if lower.is_finite() {
                    let span = c - lower;
                    lower + span * 0.5f64.powi(k as i32)
                } else if k == 0 {
                    c
                } else {
                    c - 2f64.powi(k as i32 - 1)
                }
            }
        }
    };

    let mut u = TailTracker::new();
    let mut v = TailTracker::new();
    // cumulative state at the march head
    let mut g_head = 0.0; // G(x) = ∫_c^x b/a (signed along the march)
    let mut log_m = f64::NEG_INFINITY; // ln m((c,x)) or ln m((x,c))
    let mut log_s = f64::NEG_INFINITY; // ln |s(x)|
    let mut log_u = f64::NEG_INFINITY;
    let mut log_v = f64::NEG_INFINITY;

    let mut head = x_at(0);
    for k in 1..=PANELS_MAX {
        let target = x_at(k);
        let width = (target - head).abs();
        if width == 0.0 {
            break;
        }
        let dx = (target - head) / STEPS_PER_PANEL as f64;
        for j in 0..STEPS_PER_PANEL {
            let x0 = head + dx * j as f64;
            let x1 = head + dx * (j + 1) as f64;
            let dg = gauss5(&drift_over_a, x0, x1);
            let g0 = g_head;
            let g1 = g_head + dg;
            g_head = g1;

            let step = dx.abs();
            let log_step = step.ln();
            // log s' and log m' at the step ends
            let lsp0 = -2.0 * g0;
            let lsp1 = -2.0 * g1;
            let lmp0 = std::f64::consts::LN_2 - spec.a_scalar(0.0, x0).ln() + 2.0 * g0;
            let lmp1 = std::f64::consts::LN_2 - spec.a_scalar(0.0, x1).ln() + 2.0 * g1;

            // integrand logs at the left node use the cumulants before the step
            let lfu0 = log_m + lsp0;
            let lfv0 = log_s + lmp0;
            // advance cumulative m and |s| by log-trapezoid
            let lm_inc = log_step + log_add_exp(lmp0, lmp1) - std::f64::consts::LN_2;
            let ls_inc = log_step + log_add_exp(lsp0, lsp1) - std::f64::consts::LN_2;
            log_m = log_add_exp(log_m, lm_inc);
            log_s = log_add_exp(log_s, ls_inc);
            let lfu1 = log_m + lsp1;
            let lfv1 = log_s + lmp1;

            log_u = log_add_exp(log_u, log_step + log_add_exp(lfu0, lfu1) - std::f64::consts::LN_2);
            log_v = log_add_exp(log_v, log_step + log_add_exp(lfv0, lfv1) - std::f64::consts::LN_2);
        }
        head = target;
        u.push(log_u);
        v.push(log_v);
        if u.verdict.is_some() && v.verdict.is_some() {
            break;
        }
    }
    Ok((u, v))
}

fn require_scalar(spec: &DiffusionSpec) -> Result<()> {
    if spec.dim != 1 {
        return Err(BridgeError::param("boundary classification requires a 1-D diffusion"));
    }
    Ok(())
}

/// Inaccessibility test: does `∫ m((c,x)) s'(x) dx` diverge toward the endpoint?
pub fn check_inaccessible(sd: &SpeedDensity, endpoint: Endpoint) -> Result<(bool, FellerIntegral)> {
    require_scalar(&sd.scale.spec)?;
    let (u, _) = feller_march(&sd.scale.spec, sd.scale.c, endpoint)?;
    match u.verdict {
        Some(Verdict::Diverged) => {
            let fi = u.into_integral();
            Ok((true, fi))
        }
        Some(Verdict::Converged) => {
            let fi = u.into_integral();
            Ok((false, fi))
        }
        None => Err(BridgeError::Inconclusive {
            partials: u.log_partials.iter().map(|lp| lp.exp()).collect(),
        }),
    }
}

/// Full Feller classification of one endpoint.
pub fn classify_boundary(sd: &SpeedDensity, endpoint: Endpoint) -> Result<BoundaryReport> {
    require_scalar(&sd.scale.spec)?;
    let (u, v) = feller_march(&sd.scale.spec, sd.scale.c, endpoint)?;
    let udiv = match u.verdict {
        Some(Verdict::Diverged) => true,
        Some(Verdict::Converged) => false,
        None => {
            return Err(BridgeError::Inconclusive {
                partials: u.log_partials.iter().map(|lp| lp.exp()).collect(),
            })
        }
    };
    let vdiv = match v.verdict {
        Some(Verdict::Diverged) => true,
        Some(Verdict::Converged) => false,
        None => {
            return Err(BridgeError::Inconclusive {
                partials: v.log_partials.iter().map(|lp| lp.exp()).collect(),
            })
        }
    };
    let classification = match (udiv, vdiv) {
        (false, false) => BoundaryClass::Regular,
        (false, true) => BoundaryClass::Exit,
        (true, false) => BoundaryClass::Entrance,
        (true, true) => BoundaryClass::Natural,
    };
    Ok(BoundaryReport {
        endpoint,
        classification,
        inaccessible: udiv,
        speed_against_scale: u.into_integral(),
        scale_against_speed: v.into_integral(),
    })
}

/// Probe `|b(x)| < K(1+|x|)` on a grid; a true result is evidence for
/// inaccessibility of the infinite endpoints, not a proof.
pub fn linear_growth_probe(spec: &DiffusionSpec, k: f64, grid: &[f64]) -> bool {
    grid.iter().all(|&x| spec.drift(0.0, &[x])[0].abs() < k * (1.0 + x.abs()))
}
