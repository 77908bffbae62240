//! h-functions and the bridge drift `b + a∇h/h`.
//!
//! Strong conditioning pins the terminal point: `h(t,y) = p(t,T*,y,z)`.
//! Weak conditioning reweights the terminal law by a Radon–Nikodym density
//! `H`: `h(t,y) = ∫ H(ζ) p(t,T*,y,ζ) m(dζ)`. The indicator special case
//! conditions the process to end in a region. All evaluation runs in log
//! space; an h value below the floor `1e−300` raises `HFloorError` rather
//! than silently clamping.

use crate::diffusion::{fd_step, DensityModel, DiffusionSpec};
use crate::error::{BridgeError, Result};
use crate::quad;
use crate::rng::aux_stream;
use std::sync::Arc;

/// Linear-space floor below which h is treated as vanished.
pub const H_FLOOR: f64 = 1e-300;

fn log_floor() -> f64 {
    H_FLOOR.ln()
}

/// Axis-aligned region `×_i [lower_i, upper_i]` (±∞ allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region {
    pub fn interval(lo: f64, hi: f64) -> Self {
        Region { lower: vec![lo], upper: vec![hi] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        y.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(yi, (lo, hi))| yi >= lo && yi <= hi)
    }
}

type HDensityFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type LogHFn = dyn Fn(f64, &[f64]) -> f64 + Send + Sync;
type GradLogHFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;

/// Frozen importance-sampling nodes for weak h with unbounded support.
struct WeakNodes {
    points: Vec<Vec<f64>>,
    /// log H(ζ_i) − log ρ(ζ_i), ρ the proposal density
    log_weight: Vec<f64>,
}

/// Number of frozen Monte Carlo nodes for the unbounded weak case.
pub const WEAK_MC_NODES: usize = 65_536;

enum HKind {
    Strong { z: Vec<f64> },
    Weak { h_density: Arc<HDensityFn>, support: Option<(f64, f64)>, nodes: Option<WeakNodes> },
    Indicator { region: Region },
    Explicit { log_h: Arc<LogHFn>, grad_log_h: Option<Arc<GradLogHFn>> },
}

/// An h-function tied to a density model, a horizon, and a start point.
pub struct HFunction {
    pub model: DensityModel,
    /// T*; finite except for explicit h-functions
    pub horizon: f64,
    /// conditioning start (s, x)
    pub start: (f64, Vec<f64>),
    kind: HKind,
    /// `E[H(X_{T*})]` under the unconditioned law from (s,x), with its MC
    /// standard error when estimated by sampling; 1 for a true RN density
    pub normalization: Option<(f64, Option<f64>)>,
}

impl std::fmt::Debug for HFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            HKind::Strong { .. } => "strong",
            HKind::Weak { .. } => "weak",
            HKind::Indicator { .. } => "indicator",
            HKind::Explicit { .. } => "explicit",
        };
        f.debug_struct("HFunction")
            .field("kind", &kind)
            .field("horizon", &self.horizon)
            .field("start", &self.start)
            .finish()
    }
}

impl HFunction {
    /// Strong conditioning on the terminal point `z`; requires
    /// `p(T*−s, x, z) > 0`.
    pub fn strong(model: DensityModel, s: f64, x: Vec<f64>, t_star: f64, z: Vec<f64>) -> Result<Self> {
        validate_start(&model, s, &x, t_star)?;
        if z.len() != model.dim() {
            return Err(BridgeError::param("terminal point dimension mismatch"));
        }
        if !model.spec.domain.contains(&z) {
            return Err(BridgeError::Domain { state: z, lower: model.spec.domain.lower.clone() });
        }
        let lp = model.log_density_between(s, t_star, &x, &z)?;
        if !(lp > f64::NEG_INFINITY) {
            return Err(BridgeError::param(format!(
                "strong conditioning needs p(T*-s, x, z) > 0; got log p = {lp}"
            )));
        }
        Ok(HFunction {
            model,
            horizon: t_star,
            start: (s, x),
            kind: HKind::Strong { z },
            normalization: None,
        })
    }

    /// Weak conditioning by a terminal Radon–Nikodym density `H`.
    ///
    /// With a compact 1-D `support`, h is evaluated by adaptive quadrature.
    /// Otherwise importance-sampling nodes drawn once from the unconditioned
    /// terminal law are frozen, keeping h deterministic and the drift exactly
    /// invariant under rescaling of `H`.
    pub fn weak(
        model: DensityModel,
        s: f64,
        x: Vec<f64>,
        t_star: f64,
        h_density: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        support: Option<(f64, f64)>,
        seed: u64,
    ) -> Result<Self> {
        validate_start(&model, s, &x, t_star)?;
        let h_density: Arc<HDensityFn> = Arc::new(h_density);
        let use_quadrature = support.is_some() && model.dim() == 1;
        let (nodes, normalization) = if use_quadrature {
            let (lo, hi) = support.unwrap();
            let hd = h_density.clone();
            let m = model.clone();
            let xq = x.clone();
            let norm = quad::integrate_with_breaks(
                |zeta| {
                    hd(&[zeta])
                        * m.density_between(s, t_star, &xq, &[zeta]).unwrap_or(f64::NAN)
                        * m.measure.weight(&[zeta])
                },
                lo,
                hi,
                &[x[0]],
                quad::ABS_TOL,
                quad::REL_TOL,
            )?;
            (None, Some((norm.value, None)))
        } else {
            // freeze proposal nodes from the terminal law P_{s,T*}(x,·)
            let mut rng = aux_stream(seed, 0xB1D6E);
            let mut points = Vec::with_capacity(WEAK_MC_NODES);
            for _ in 0..WEAK_MC_NODES {
                let p = model.sample_transition(s, t_star, &x, &mut rng).ok_or_else(|| {
                    BridgeError::param(
                        "weak conditioning without support bounds needs a model with an exact terminal sampler",
                    )
                })?;
                points.push(p);
            }
            // importance weights log H(ζ_i) − log ρ(ζ_i) with the proposal ρ
            // being the terminal law itself; the normalisation estimate is
            // then the plain mean of H over the nodes
            let mut log_weight = Vec::with_capacity(WEAK_MC_NODES);
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for p in &points {
                let hv = h_density(p);
                if hv < 0.0 {
                    return Err(BridgeError::param("H must be nonnegative"));
                }
                sum += hv;
                sumsq += hv * hv;
                let log_rho = model.log_density_between(s, t_star, &x, p)?;
                log_weight.push(hv.ln() - log_rho);
            }
            let n = WEAK_MC_NODES as f64;
            let mean = sum / n;
            let se = ((sumsq / n - mean * mean) / n).max(0.0).sqrt();
            (Some(WeakNodes { points, log_weight }), Some((mean, Some(se))))
        };
        Ok(HFunction {
            model,
            horizon: t_star,
            start: (s, x),
            kind: HKind::Weak { h_density, support, nodes },
            normalization,
        })
    }

    /// Indicator conditioning: terminal state constrained to `region`
    /// (h(t,y) is the transition mass of the region).
    pub fn indicator(model: DensityModel, s: f64, x: Vec<f64>, t_star: f64, region: Region) -> Result<Self> {
        validate_start(&model, s, &x, t_star)?;
        if region.dim() != model.dim() {
            return Err(BridgeError::param("region dimension mismatch"));
        }
        let h = HFunction {
            model,
            horizon: t_star,
            start: (s, x.clone()),
            kind: HKind::Indicator { region },
            normalization: None,
        };
        let lp = h.log_h(s, &x)?;
        if !(lp > log_floor()) {
            return Err(BridgeError::param(
                "indicator conditioning needs P_{s,T*}(x, E) > 0 at the start point",
            ));
        }
        Ok(h)
    }

    /// Explicit h with optional analytic gradient; horizon may be infinite.
    pub fn explicit(
        model: DensityModel,
        s: f64,
        x: Vec<f64>,
        horizon: f64,
        log_h: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        grad_log_h: Option<Arc<GradLogHFn>>,
    ) -> Result<Self> {
        if !(horizon > s) {
            return Err(BridgeError::Time("horizon must exceed the start time".into()));
        }
        Ok(HFunction {
            model,
            horizon,
            start: (s, x),
            kind: HKind::Explicit { log_h: Arc::new(log_h), grad_log_h },
            normalization: None,
        })
    }

    pub fn is_strong(&self) -> bool {
        matches!(self.kind, HKind::Strong { .. })
    }

    pub fn target(&self) -> Option<&[f64]> {
        match &self.kind {
            HKind::Strong { z } => Some(z),
            _ => None,
        }
    }

    pub fn indicator_region(&self) -> Option<&Region> {
        match &self.kind {
            HKind::Indicator { region } => Some(region),
            _ => None,
        }
    }

    /// Whether this h-function reweights the terminal law (weak or
    /// indicator conditioning).
    pub fn has_terminal_weight(&self) -> bool {
        matches!(self.kind, HKind::Weak { .. } | HKind::Indicator { .. })
    }

    /// Terminal weight `H(y)` (the RN density; indicator of the region in
    /// the indicator case), used by terminal-law reweighting.
    pub fn terminal_weight(&self, y: &[f64]) -> Option<f64> {
        match &self.kind {
            HKind::Weak { h_density, .. } => Some(h_density(y)),
            HKind::Indicator { region } => Some(if region.contains(y) { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (s, _) = &self.start;
        if t < *s {
            return Err(BridgeError::Time(format!("t={t} before the start time {s}")));
        }
        if t >= self.horizon {
            return Err(BridgeError::Time(format!("t={t} not before the horizon {}", self.horizon)));
        }
        Ok(())
    }

    /// `log h(t,y)`; errors with `HFloorError` below the floor.
    pub fn log_h(&self, t: f64, y: &[f64]) -> Result<f64> {
        self.check_time(t)?;
        let lp = self.log_h_unchecked(t, y)?;
        if lp < log_floor() {
            return Err(BridgeError::HFloor { t, y: y.to_vec(), log_h: lp });
        }
        Ok(lp)
    }

    fn log_h_unchecked(&self, t: f64, y: &[f64]) -> Result<f64> {
        match &self.kind {
            HKind::Strong { z } => self.model.log_density_between(t, self.horizon, y, z),
            HKind::Indicator { region } => {
                if self.model.dim() == 1 {
                    if let Some(lm) =
                        self.model.log_mass_between(t, self.horizon, y, region.lower[0], region.upper[0])
                    {
                        return Ok(lm);
                    }
                    let m = &self.model;
                    let r = quad::integrate_with_breaks(
                        |zeta| {
                            m.density_between(t, self.horizon, y, &[zeta]).unwrap_or(f64::NAN)
                                * m.measure.weight(&[zeta])
                        },
                        region.lower[0],
                        region.upper[0],
                        &[y[0]],
                        quad::ABS_TOL,
                        quad::REL_TOL,
                    )?;
                    Ok(r.value.max(0.0).ln())
                } else {
                    Err(BridgeError::param(
                        "indicator h in d > 1 needs a kernel with closed-form region mass",
                    ))
                }
            }
            HKind::Weak { h_density, support, nodes } => {
                if let Some(nodes) = nodes {
                    // log Σ exp(log w_i + log p(t,T*,y,ζ_i)) − log N
                    let mut max = f64::NEG_INFINITY;
                    let mut terms = Vec::with_capacity(nodes.points.len());
                    for (p, lw) in nodes.points.iter().zip(&nodes.log_weight) {
                        let lp = self.model.log_density_between(t, self.horizon, y, p)? + lw;
                        if lp > max {
                            max = lp;
                        }
                        terms.push(lp);
                    }
                    if max == f64::NEG_INFINITY {
                        return Ok(f64::NEG_INFINITY);
                    }
                    let sum: f64 = terms.iter().map(|lp| (lp - max).exp()).sum();
                    Ok(max + sum.ln() - (nodes.points.len() as f64).ln())
                } else {
                    let (lo, hi) = support.expect("weak quadrature requires support");
                    let m = &self.model;
                    let r = quad::integrate_with_breaks(
                        |zeta| {
                            h_density(&[zeta])
                                * m.density_between(t, self.horizon, y, &[zeta]).unwrap_or(f64::NAN)
                                * m.measure.weight(&[zeta])
                        },
                        lo,
                        hi,
                        &[y[0]],
                        quad::ABS_TOL,
                        quad::REL_TOL,
                    )?;
                    Ok(r.value.max(0.0).ln())
                }
            }
            HKind::Explicit { log_h, .. } => Ok(log_h(t, y)),
        }
    }

    /// `h(t,y)`.
    pub fn eval(&self, t: f64, y: &[f64]) -> Result<f64> {
        Ok(self.log_h(t, y)?.exp())
    }

    /// `∇_y h(t,y)`, assembled as `h·∇log h` so the ratio ∇h/h used by the
    /// drift agrees with ∇log h identically.
    pub fn grad_h(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let h = self.eval(t, y)?;
        Ok(self.grad_log_h(t, y)?.into_iter().map(|g| g * h).collect())
    }

    /// `∇_y log h(t,y) = ∇h/h`.
    pub fn grad_log_h(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.check_time(t)?;
        match &self.kind {
            HKind::Strong { z } => {
                // floor check before differentiating
                self.log_h(t, y)?;
                self.model.grad_log_between(t, self.horizon, y, z)
            }
            HKind::Weak { nodes: Some(nodes), .. } => {
                // softmax-weighted average of the per-node gradients
                let mut logs = Vec::with_capacity(nodes.points.len());
                let mut max = f64::NEG_INFINITY;
                for (p, lw) in nodes.points.iter().zip(&nodes.log_weight) {
                    let lp = self.model.log_density_between(t, self.horizon, y, p)? + lw;
                    if lp > max {
                        max = lp;
                    }
                    logs.push(lp);
                }
                if max == f64::NEG_INFINITY {
                    return Err(BridgeError::HFloor { t, y: y.to_vec(), log_h: max });
                }
                let mut denom = 0.0;
                let mut grad = vec![0.0; y.len()];
                for (i, p) in nodes.points.iter().enumerate() {
                    let w = (logs[i] - max).exp();
                    if w == 0.0 {
                        continue;
                    }
                    let g = self.model.grad_log_between(t, self.horizon, y, p)?;
                    for (gi, gv) in grad.iter_mut().zip(&g) {
                        *gi += w * gv;
                    }
                    denom += w;
                }
                for gi in &mut grad {
                    *gi /= denom;
                }
                Ok(grad)
            }
            HKind::Explicit { grad_log_h: Some(g), .. } => Ok(g(t, y)),
            _ => {
                // floor check, then central differences on log h
                self.log_h(t, y)?;
                let mut yp = y.to_vec();
                let mut grad = vec![0.0; y.len()];
                for i in 0..y.len() {
                    let h = fd_step(y[i]);
                    yp[i] = y[i] + h;
                    let fp = self.log_h_unchecked(t, &yp)?;
                    yp[i] = y[i] - h;
                    let fm = self.log_h_unchecked(t, &yp)?;
                    yp[i] = y[i];
                    grad[i] = (fp - fm) / (2.0 * h);
                }
                Ok(grad)
            }
        }
    }
}

fn validate_start(model: &DensityModel, s: f64, x: &[f64], t_star: f64) -> Result<()> {
    if !(t_star.is_finite() && t_star > s) {
        return Err(BridgeError::Time(format!("need s < T* < ∞, got s={s}, T*={t_star}")));
    }
    if x.len() != model.dim() {
        return Err(BridgeError::param("start state dimension mismatch"));
    }
    if !model.spec.domain.contains(x) {
        return Err(BridgeError::Domain {
            state: x.to_vec(),
            lower: model.spec.domain.lower.clone(),
        });
    }
    Ok(())
}

/// A diffusion conditioned through an h-function; owns the bridge drift.
pub struct BridgeProcess {
    pub h: HFunction,
}

impl BridgeProcess {
    pub fn new(h: HFunction) -> Self {
        BridgeProcess { h }
    }

    pub fn strong(model: DensityModel, s: f64, x: Vec<f64>, t_star: f64, z: Vec<f64>) -> Result<Self> {
        Ok(BridgeProcess { h: HFunction::strong(model, s, x, t_star, z)? })
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.h.model.spec
    }

    pub fn start(&self) -> (f64, &[f64]) {
        (self.h.start.0, &self.h.start.1)
    }

    pub fn t_star(&self) -> f64 {
        self.horizon()
    }

    pub fn horizon(&self) -> f64 {
        self.h.horizon
    }

    pub fn target(&self) -> Option<&[f64]> {
        self.h.target()
    }

    /// Bridge drift `b(t,y) + a(t,y)·∇h/h` (Markov bridge SDE).
    pub fn drift(&self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let spec = self.spec();
        let b = spec.drift(t, y);
        let a = spec.a_matrix(t, y)?;
        let glh = self.h.grad_log_h(t, y)?;
        let mut out = b;
        for i in 0..out.len() {
            let mut acc = 0.0;
            for j in 0..glh.len() {
                acc += a[(i, j)] * glh[j];
            }
            out[i] += acc;
        }
        if out.iter().any(|v| !v.is_finite()) {
            let log_h = self.h.log_h(t, y).ok();
            return Err(BridgeError::numerics(format!(
                "non-finite bridge drift at t={t}, y={y:?} (log_h={log_h:?}, grad_log_h={glh:?})"
            )));
        }
        Ok(out)
    }
}

/// h-transform transition probability
/// `P^h_{s',t}(x', E) = ∫_E h(t,y) p(s',t,x',y) m(dy) / h(s',x')`.
pub fn h_transform_transition(
    h: &HFunction,
    s_prime: f64,
    t: f64,
    x_prime: &[f64],
    region: &Region,
) -> Result<f64> {
    if !(s_prime < t && t < h.horizon) {
        return Err(BridgeError::Time(format!(
            "need s' < t < T*, got s'={s_prime}, t={t}, T*={}",
            h.horizon
        )));
    }
    if h.model.dim() != 1 {
        return Err(BridgeError::param("h-transform transition quadrature is 1-D"));
    }
    let log_h_start = h.log_h(s_prime, x_prime)?;
    let m = &h.model;
    let mut breaks = vec![x_prime[0]];
    if let Some(z) = h.target() {
        breaks.push(z[0]);
    }
    let r = quad::integrate_with_breaks(
        |y| {
            let ly = match h.log_h(t, &[y]) {
                Ok(v) => v,
                Err(BridgeError::HFloor { log_h, .. }) => log_h,
                Err(_) => return f64::NAN,
            };
            let lp = m.log_density_between(s_prime, t, x_prime, &[y]).unwrap_or(f64::NEG_INFINITY);
            (ly + lp - log_h_start).exp() * m.measure.weight(&[y])
        },
        region.lower[0],
        region.upper[0],
        &breaks,
        quad::ABS_TOL,
        1e-9,
    )
    .map_err(|e| BridgeError::Quadrature(format!("h-transform transition: {e}")))?;
    Ok(r.value)
}
