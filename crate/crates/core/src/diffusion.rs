//! Time-dependent diffusions and closed-form transition-density models.
//!
//! A [`DiffusionSpec`] carries the coefficient fields `(a, b, σ)` and the
//! state domain `E = ×_i [l_i, ∞)`. A [`DensityModel`] pairs a spec with a
//! transition density `p(s,t,x,y)` taken with respect to a reference
//! measure `m` (Lebesgue or a weighted 1-D speed measure).

use crate::error::{BridgeError, Result};
use crate::special::{bessel_i_ratio, log_bessel_i, normal_log_pdf};
use nalgebra::DMatrix;
use rand::RngCore;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Product domain `×_i [l_i, ∞)`; a lower bound of `-∞` frees that coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainBox {
    pub lower: Vec<f64>,
}

impl DomainBox {
    pub fn unbounded(dim: usize) -> Self {
        DomainBox { lower: vec![f64::NEG_INFINITY; dim] }
    }

    pub fn half_line(lower: f64) -> Self {
        DomainBox { lower: vec![lower] }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len() && x.iter().zip(&self.lower).all(|(xi, li)| xi >= li)
    }

    pub fn is_interior(&self, x: &[f64]) -> bool {
        x.len() == self.lower.len()
            && x.iter()
                .zip(&self.lower)
                .all(|(xi, li)| li.is_infinite() || xi > li)
    }

    /// Push a state strictly inside the domain; returns true if it moved.
    pub fn project_interior(&self, x: &mut [f64], eps: f64) -> bool {
        let mut moved = false;
        for (xi, li) in x.iter_mut().zip(&self.lower) {
            if li.is_finite() && *xi < *li + eps {
                *xi = *li + eps;
                moved = true;
            }
        }
        moved
    }
}

type DriftFn = dyn Fn(f64, &[f64]) -> Vec<f64> + Send + Sync;
type DispersionFn = dyn Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync;

/// Coefficient fields of the SDE `dX = b(t,X)dt + σ(t,X)dB` on a domain.
#[derive(Clone)]
pub struct DiffusionSpec {
    pub dim: usize,
    drift: Arc<DriftFn>,
    dispersion: Arc<DispersionFn>,
    pub domain: DomainBox,
}

impl std::fmt::Debug for DiffusionSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiffusionSpec")
            .field("dim", &self.dim)
            .field("domain", &self.domain)
            .finish()
    }
}

impl DiffusionSpec {
    pub fn new(
        dim: usize,
        drift: impl Fn(f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
        dispersion: impl Fn(f64, &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        domain: DomainBox,
    ) -> Self {
        assert_eq!(domain.dim(), dim, "domain dimension mismatch");
        DiffusionSpec { dim, drift: Arc::new(drift), dispersion: Arc::new(dispersion), domain }
    }

    /// Scalar diffusion `dX = b(X)dt + σ(X)dB` on `[lower, ∞)`.
    pub fn scalar(
        drift: impl Fn(f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        lower: f64,
    ) -> Self {
        DiffusionSpec::new(
            1,
            move |_t, x| vec![drift(x[0])],
            move |_t, x| DMatrix::from_element(1, 1, sigma(x[0])),
            DomainBox::half_line(lower),
        )
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        (self.drift)(t, x)
    }

    pub fn dispersion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        (self.dispersion)(t, x)
    }

    /// `a(t,x) = σσ*(t,x)`; errors when `x` leaves the domain.
    pub fn a_matrix(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        if !self.domain.contains(x) {
            return Err(BridgeError::Domain { state: x.to_vec(), lower: self.domain.lower.clone() });
        }
        let s = self.dispersion(t, x);
        Ok(&s * s.transpose())
    }

    /// Scalar `a(x)` for 1-D specs.
    pub fn a_scalar(&self, t: f64, x: f64) -> f64 {
        let s = self.dispersion(t, &[x]);
        s[(0, 0)] * s[(0, 0)]
    }
}

/// Reference measure for densities and verification quadratures.
#[derive(Clone)]
pub enum ReferenceMeasure {
    Lebesgue,
    /// `m(dy) = w(y)dy` with `w > 0` on the domain interior (1-D speed measures).
    Weighted { weight: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync> },
}

impl std::fmt::Debug for ReferenceMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ReferenceMeasure::Lebesgue => write!(f, "Lebesgue"),
            ReferenceMeasure::Weighted { .. } => write!(f, "Weighted"),
        }
    }
}

impl ReferenceMeasure {
    /// Density of `m` with respect to Lebesgue at `y`.
    pub fn weight(&self, y: &[f64]) -> f64 {
        match self {
            ReferenceMeasure::Lebesgue => 1.0,
            ReferenceMeasure::Weighted { weight } => weight(y),
        }
    }
}

/// Two-time transition kernel `p(s,t,x,y)` evaluated in log space.
///
/// Homogeneous kernels only see `t - s`. Gradients and exact transition
/// samplers are optional; callers fall back to finite differences and
/// Euler stepping respectively.
pub trait TransitionKernel: Send + Sync {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64;

    fn grad_log_x(&self, _s: f64, _t: f64, _x: &[f64], _y: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn sample(&self, _s: f64, _t: f64, _x: &[f64], _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }

    /// `log ∫_{lo}^{hi} p(s,t,x,ζ) m(dζ)` for 1-D kernels with a closed form.
    fn log_mass(&self, _s: f64, _t: f64, _x: &[f64], _lo: f64, _hi: f64) -> Option<f64> {
        None
    }
}

/// Relative step for central finite differences on log densities.
pub const FD_REL_STEP: f64 = 1e-5;

pub fn fd_step(xi: f64) -> f64 {
    FD_REL_STEP * xi.abs().max(1.0)
}

/// Closed-form transition-density model over a diffusion spec.
#[derive(Clone)]
pub struct DensityModel {
    pub spec: DiffusionSpec,
    pub measure: ReferenceMeasure,
    pub homogeneous: bool,
    pub name: String,
    kernel: Arc<dyn TransitionKernel>,
}

impl std::fmt::Debug for DensityModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DensityModel")
            .field("name", &self.name)
            .field("homogeneous", &self.homogeneous)
            .finish()
    }
}

impl DensityModel {
    pub fn new(
        spec: DiffusionSpec,
        measure: ReferenceMeasure,
        homogeneous: bool,
        name: impl Into<String>,
        kernel: Arc<dyn TransitionKernel>,
    ) -> Self {
        DensityModel { spec, measure, homogeneous, name: name.into(), kernel }
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    fn check_times(&self, s: f64, t: f64) -> Result<()> {
        if !(t > s) {
            return Err(BridgeError::Time(format!("need s < t, got s={s}, t={t}")));
        }
        Ok(())
    }

    /// `log p(s,t,x,y)`; `-∞` signals a vanishing density, not an error.
    pub fn log_density_between(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_times(s, t)?;
        Ok(self.kernel.log_density(s, t, x, y))
    }

    pub fn density_between(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.log_density_between(s, t, x, y)?.exp())
    }

    /// Elapsed-time density `p(t,x,y)`; for inhomogeneous models this is the
    /// kernel from time 0 to `t`.
    pub fn density(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        self.density_between(0.0, t, x, y)
    }

    pub fn log_density(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        self.log_density_between(0.0, t, x, y)
    }

    /// `∇_x log p(s,t,x,y)`: analytic when the kernel provides it, central
    /// finite differences on the log density otherwise.
    pub fn grad_log_between(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.check_times(s, t)?;
        if let Some(g) = self.kernel.grad_log_x(s, t, x, y) {
            return Ok(g);
        }
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = fd_step(x[i]);
            xp[i] = x[i] + h;
            let fp = self.kernel.log_density(s, t, &xp, y);
            xp[i] = x[i] - h;
            let fm = self.kernel.log_density(s, t, &xp, y);
            xp[i] = x[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        Ok(g)
    }

    pub fn grad_log(&self, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        self.grad_log_between(0.0, t, x, y)
    }

    pub fn has_analytic_grad(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> bool {
        self.kernel.grad_log_x(s, t, x, y).is_some()
    }

    /// Closed-form `log ∫_{lo}^{hi} p(s,t,x,ζ)m(dζ)` when the kernel has one.
    pub fn log_mass_between(&self, s: f64, t: f64, x: &[f64], lo: f64, hi: f64) -> Option<f64> {
        self.kernel.log_mass(s, t, x, lo, hi)
    }

    /// Exact draw of `X_t | X_s = x` when the kernel has a sampler.
    pub fn sample_transition(
        &self,
        s: f64,
        t: f64,
        x: &[f64],
        rng: &mut dyn RngCore,
    ) -> Option<Vec<f64>> {
        self.kernel.sample(s, t, x, rng)
    }
}

/// Builtin model families and their parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum BuiltinSpec {
    Brownian {
        dim: usize,
        #[serde(default)]
        drift: Vec<f64>,
        #[serde(default = "one")]
        sigma: f64,
    },
    Ou {
        theta: f64,
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    Bessel {
        delta: f64,
        /// Reference the density against the speed measure `2 y^{δ-1} dy`
        /// instead of Lebesgue.
        #[serde(default)]
        speed_measure: bool,
    },
    GeometricBm {
        mu: f64,
        sigma: f64,
    },
    LinearGaussian {
        dim: usize,
        sigma: Vec<Vec<f64>>,
        b: Vec<f64>,
        gamma: Vec<Vec<f64>>,
        horizon: f64,
    },
}

fn one() -> f64 {
    1.0
}

struct BrownianKernel {
    dim: usize,
    drift: Vec<f64>,
    sigma: f64,
}

impl TransitionKernel for BrownianKernel {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let tau = t - s;
        let sd = self.sigma * tau.sqrt();
        let mut lp = 0.0;
        for i in 0..self.dim {
            let z = (y[i] - x[i] - self.drift[i] * tau) / sd;
            lp += normal_log_pdf(z) - sd.ln();
        }
        lp
    }

    fn grad_log_x(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let tau = t - s;
        let v = self.sigma * self.sigma * tau;
        Some(
            (0..self.dim)
                .map(|i| (y[i] - x[i] - self.drift[i] * tau) / v)
                .collect(),
        )
    }

    fn sample(&self, s: f64, t: f64, x: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let tau = t - s;
        let sd = self.sigma * tau.sqrt();
        Some(
            (0..self.dim)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    x[i] + self.drift[i] * tau + sd * z
                })
                .collect(),
        )
    }

    fn log_mass(&self, s: f64, t: f64, x: &[f64], lo: f64, hi: f64) -> Option<f64> {
        if self.dim != 1 {
            return None;
        }
        let tau = t - s;
        let mean = x[0] + self.drift[0] * tau;
        let sd = self.sigma * tau.sqrt();
        Some(crate::special::log_normal_mass((lo - mean) / sd, (hi - mean) / sd))
    }
}

struct OuKernel {
    theta: f64,
    mean: f64,
    sigma: f64,
}

impl OuKernel {
    fn moments(&self, tau: f64, x: f64) -> (f64, f64) {
        let decay = (-self.theta * tau).exp();
        let mean = self.mean + (x - self.mean) * decay;
        // σ²(1 − e^{−2θτ})/(2θ), continuous at θ = 0
        let var = if self.theta.abs() < 1e-12 {
            self.sigma * self.sigma * tau
        } else {
            -self.sigma * self.sigma * (-2.0 * self.theta * tau).exp_m1() / (2.0 * self.theta)
        };
        (mean, var)
    }
}

impl TransitionKernel for OuKernel {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let (mean, var) = self.moments(t - s, x[0]);
        let sd = var.sqrt();
        normal_log_pdf((y[0] - mean) / sd) - sd.ln()
    }

    fn grad_log_x(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let tau = t - s;
        let (mean, var) = self.moments(tau, x[0]);
        Some(vec![(y[0] - mean) / var * (-self.theta * tau).exp()])
    }

    fn sample(&self, s: f64, t: f64, x: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let (mean, var) = self.moments(t - s, x[0]);
        let z: f64 = StandardNormal.sample(&mut *rng);
        Some(vec![mean + var.sqrt() * z])
    }

    fn log_mass(&self, s: f64, t: f64, x: &[f64], lo: f64, hi: f64) -> Option<f64> {
        let (mean, var) = self.moments(t - s, x[0]);
        let sd = var.sqrt();
        Some(crate::special::log_normal_mass((lo - mean) / sd, (hi - mean) / sd))
    }
}

struct BesselKernel {
    delta: f64,
    nu: f64,
    /// density taken against the speed measure 2 y^{δ-1} dy
    speed_measure: bool,
}

impl TransitionKernel for BesselKernel {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let tau = t - s;
        let (x, y) = (x[0], y[0]);
        if y < 0.0 || x < 0.0 {
            return f64::NEG_INFINITY;
        }
        if y == 0.0 {
            return if self.delta < 1.0 && !self.speed_measure {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
        }
        let lp = if x == 0.0 {
            // entrance limit: p(τ,0,y) = 2^{1-δ/2} Γ(δ/2)^{-1} τ^{-δ/2} y^{δ-1} e^{-y²/2τ}
            (1.0 - 0.5 * self.delta) * std::f64::consts::LN_2
                - crate::special::ln_gamma(0.5 * self.delta)
                - 0.5 * self.delta * tau.ln()
                + (self.delta - 1.0) * y.ln()
                - y * y / (2.0 * tau)
        } else {
            self.nu * (y / x).ln() + (y / tau).ln() - (x * x + y * y) / (2.0 * tau)
                + log_bessel_i(self.nu, x * y / tau)
        };
        if self.speed_measure {
            lp - std::f64::consts::LN_2 - (self.delta - 1.0) * y.ln()
        } else {
            lp
        }
    }

    fn grad_log_x(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let tau = t - s;
        let (x, y) = (x[0], y[0]);
        if x <= 0.0 || y <= 0.0 {
            return None;
        }
        // d/dx log p = -x/τ + (y/τ)·I_{ν+1}(xy/τ)/I_ν(xy/τ)
        Some(vec![-x / tau + (y / tau) * bessel_i_ratio(self.nu, x * y / tau)])
    }

    fn sample(&self, s: f64, t: f64, x: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        // BESQ transition is a scaled noncentral chi-square.
        let tau = t - s;
        let y0 = x[0] * x[0];
        let lambda = y0 / tau;
        let n = if lambda > 0.0 {
            let pois = Poisson::new(0.5 * lambda).ok()?;
            pois.sample(&mut *rng)
        } else {
            0.0
        };
        let shape = 0.5 * self.delta + n;
        let g = Gamma::new(shape, 2.0).ok()?;
        let ysq = tau * g.sample(&mut *rng);
        Some(vec![ysq.sqrt()])
    }
}

struct GeometricBmKernel {
    mu: f64,
    sigma: f64,
}

impl GeometricBmKernel {
    fn log_mean_rate(&self) -> f64 {
        self.mu - 0.5 * self.sigma * self.sigma
    }
}

impl TransitionKernel for GeometricBmKernel {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let tau = t - s;
        let (x, y) = (x[0], y[0]);
        if y <= 0.0 || x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let sd = self.sigma * tau.sqrt();
        let z = ((y / x).ln() - self.log_mean_rate() * tau) / sd;
        normal_log_pdf(z) - sd.ln() - y.ln()
    }

    fn grad_log_x(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let tau = t - s;
        let (x, y) = (x[0], y[0]);
        if y <= 0.0 || x <= 0.0 {
            return None;
        }
        let v = self.sigma * self.sigma * tau;
        Some(vec![((y / x).ln() - self.log_mean_rate() * tau) / (v * x)])
    }

    fn sample(&self, s: f64, t: f64, x: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let tau = t - s;
        let z: f64 = StandardNormal.sample(&mut *rng);
        Some(vec![x[0] * (self.log_mean_rate() * tau + self.sigma * tau.sqrt() * z).exp()])
    }
}

/// Build a [`DensityModel`] for one of the builtin families.
pub fn builtin_model(spec: &BuiltinSpec) -> Result<DensityModel> {
    match spec {
        BuiltinSpec::Brownian { dim, drift, sigma } => {
            let dim = *dim;
            if dim == 0 {
                return Err(BridgeError::param("brownian: dim must be positive"));
            }
            if *sigma <= 0.0 {
                return Err(BridgeError::param("brownian: sigma must be positive"));
            }
            let drift = if drift.is_empty() { vec![0.0; dim] } else { drift.clone() };
            if drift.len() != dim {
                return Err(BridgeError::param("brownian: drift length must equal dim"));
            }
            let mu = drift.clone();
            let sg = *sigma;
            let dspec = DiffusionSpec::new(
                dim,
                move |_t, _x| mu.clone(),
                move |_t, _x| DMatrix::identity(dim, dim) * sg,
                DomainBox::unbounded(dim),
            );
            Ok(DensityModel::new(
                dspec,
                ReferenceMeasure::Lebesgue,
                true,
                "brownian",
                Arc::new(BrownianKernel { dim, drift, sigma: *sigma }),
            ))
        }
        BuiltinSpec::Ou { theta, mean, sigma } => {
            if *sigma <= 0.0 {
                return Err(BridgeError::param("ou: sigma must be positive"));
            }
            if !theta.is_finite() {
                return Err(BridgeError::param("ou: theta must be finite"));
            }
            let (th, mn, sg) = (*theta, *mean, *sigma);
            let dspec = DiffusionSpec::scalar(move |x| -th * (x - mn), move |_| sg, f64::NEG_INFINITY);
            Ok(DensityModel::new(
                dspec,
                ReferenceMeasure::Lebesgue,
                true,
                "ou",
                Arc::new(OuKernel { theta: th, mean: mn, sigma: sg }),
            ))
        }
        BuiltinSpec::Bessel { delta, speed_measure } => {
            if !(*delta > 0.0) {
                return Err(BridgeError::param("bessel: delta must be positive"));
            }
            let d = *delta;
            let dspec = DiffusionSpec::scalar(move |x| (d - 1.0) / (2.0 * x), |_| 1.0, 0.0);
            let measure = if *speed_measure {
                ReferenceMeasure::Weighted {
                    weight: Arc::new(move |y: &[f64]| 2.0 * y[0].powf(d - 1.0)),
                }
            } else {
                ReferenceMeasure::Lebesgue
            };
            Ok(DensityModel::new(
                dspec,
                measure,
                true,
                "bessel",
                Arc::new(BesselKernel { delta: d, nu: 0.5 * d - 1.0, speed_measure: *speed_measure }),
            ))
        }
        BuiltinSpec::GeometricBm { mu, sigma } => {
            if *sigma <= 0.0 {
                return Err(BridgeError::param("geometric_bm: sigma must be positive"));
            }
            let (m, sg) = (*mu, *sigma);
            let dspec = DiffusionSpec::scalar(move |x| m * x, move |x| sg * x, 0.0);
            Ok(DensityModel::new(
                dspec,
                ReferenceMeasure::Lebesgue,
                true,
                "geometric_bm",
                Arc::new(GeometricBmKernel { mu: m, sigma: sg }),
            ))
        }
        BuiltinSpec::LinearGaussian { dim, sigma, b, gamma, horizon } => {
            let lin = crate::gaussian::LinearSde::from_tables(*dim, sigma, b, gamma, *horizon)?;
            crate::gaussian::gaussian_density_model(&lin)
        }
    }
}

/// Spec-level operation: `a(t,x) = σσ*` with domain checking.
pub fn a_matrix(spec: &DiffusionSpec, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
    spec.a_matrix(t, x)
}

/// Spec-level operation: density evaluation with time validation.
pub fn eval_density(model: &DensityModel, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    model.density(t, x, y)
}

/// Spec-level operation: `∇_x log p(t,x,y)`.
pub fn eval_grad_log(model: &DensityModel, t: f64, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    model.grad_log(t, x, y)
}
