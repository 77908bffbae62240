//! Closed-form machinery for the linear SDE
//! `dX_t = σ(t)dB_t + {b(t) + γ(t)X_t}dt`.
//!
//! The fundamental matrix solves `dF⁻¹/dt = −F⁻¹γ(t)` with `F⁻¹(0) = I`;
//! conditional mean and covariance follow from it. The transition kernel is
//! Gaussian, and the bridge drift has the explicit form
//! `b(s) + γ(s)x + a(s)·(F(T*)F⁻¹(s))*·Σ⁻¹(s,T*)·(z − m(s,T*,x))`,
//! i.e. `b + γx + a·∇_x log h` with `h(s,x)` the density of the terminal
//! point under the unconditioned law.

use crate::diffusion::{DensityModel, DiffusionSpec, DomainBox, ReferenceMeasure, TransitionKernel};
use crate::error::{BridgeError, Result};
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use std::sync::{Arc, Mutex};

type MatFn = dyn Fn(f64) -> DMatrix<f64> + Send + Sync;
type VecFn = dyn Fn(f64) -> DVector<f64> + Send + Sync;

/// Linear SDE coefficients on `[0, horizon]`.
#[derive(Clone)]
pub struct LinearSde {
    pub dim: usize,
    sigma: Arc<MatFn>,
    b: Arc<VecFn>,
    gamma: Arc<MatFn>,
    pub horizon: f64,
    /// smallest eigenvalue of `a(t)` seen on the construction probe grid
    pub ellipticity: f64,
    cache: Arc<Mutex<Vec<(f64, OdeState)>>>,
}

#[derive(Clone, Debug)]
struct OdeState {
    /// F⁻¹(t)
    f_inv: DMatrix<f64>,
    /// ∫_0^t F⁻¹(u) b(u) du
    ib: DVector<f64>,
    /// ∫_0^t (F⁻¹σ)(F⁻¹σ)*(u) du
    icov: DMatrix<f64>,
}

impl std::fmt::Debug for LinearSde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearSde")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("ellipticity", &self.ellipticity)
            .finish()
    }
}

impl LinearSde {
    pub fn new(
        dim: usize,
        sigma: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        b: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
        gamma: impl Fn(f64) -> DMatrix<f64> + Send + Sync + 'static,
        horizon: f64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(BridgeError::param("linear sde: dim must be positive"));
        }
        if !(horizon > 0.0) {
            return Err(BridgeError::param("linear sde: horizon must be positive"));
        }
        let lin = LinearSde {
            dim,
            sigma: Arc::new(sigma),
            b: Arc::new(b),
            gamma: Arc::new(gamma),
            horizon,
            ellipticity: 0.0,
            cache: Arc::new(Mutex::new(Vec::new())),
        };
        let c = lin.probe_ellipticity(33);
        if !(c > 0.0) {
            return Err(BridgeError::param(format!(
                "linear sde: uniform ellipticity violated on probe grid (min eigenvalue {c:.3e})"
            )));
        }
        Ok(LinearSde { ellipticity: c, ..lin })
    }

    /// Constant-coefficient system from row-major tables (CLI config form).
    pub fn from_tables(
        dim: usize,
        sigma: &[Vec<f64>],
        b: &[f64],
        gamma: &[Vec<f64>],
        horizon: f64,
    ) -> Result<Self> {
        let to_mat = |rows: &[Vec<f64>], what: &str| -> Result<DMatrix<f64>> {
            if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                return Err(BridgeError::param(format!("linear sde: {what} must be {dim}x{dim}")));
            }
            Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
        };
        let sig = to_mat(sigma, "sigma")?;
        let gam = to_mat(gamma, "gamma")?;
        if b.len() != dim {
            return Err(BridgeError::param(format!("linear sde: b must have length {dim}")));
        }
        let bv = DVector::from_column_slice(b);
        LinearSde::new(dim, move |_| sig.clone(), move |_| bv.clone(), move |_| gam.clone(), horizon)
    }

    pub fn sigma_at(&self, t: f64) -> DMatrix<f64> {
        (self.sigma)(t)
    }

    pub fn b_at(&self, t: f64) -> DVector<f64> {
        (self.b)(t)
    }

    pub fn gamma_at(&self, t: f64) -> DMatrix<f64> {
        (self.gamma)(t)
    }

    pub fn a_at(&self, t: f64) -> DMatrix<f64> {
        let s = self.sigma_at(t);
        &s * s.transpose()
    }

    fn probe_ellipticity(&self, n: usize) -> f64 {
        let mut min_eig = f64::INFINITY;
        for k in 0..=n {
            let t = self.horizon * k as f64 / n as f64;
            let a = self.a_at(t);
            let eig = a.symmetric_eigenvalues();
            min_eig = min_eig.min(eig.min());
        }
        min_eig
    }

    fn dimension_sizes(&self) -> (usize, usize, usize) {
        let d = self.dim;
        (d * d, d, d * d)
    }

    fn pack(&self, st: &OdeState) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.dim * self.dim + self.dim);
        v.extend(st.f_inv.iter());
        v.extend(st.ib.iter());
        v.extend(st.icov.iter());
        v
    }

    fn unpack(&self, y: &[f64]) -> OdeState {
        let d = self.dim;
        let (nf, nb, _) = self.dimension_sizes();
        OdeState {
            f_inv: DMatrix::from_column_slice(d, d, &y[..nf]),
            ib: DVector::from_column_slice(&y[nf..nf + nb]),
            icov: DMatrix::from_column_slice(d, d, &y[nf + nb..]),
        }
    }

    fn derivative(&self, t: f64, y: &[f64]) -> Vec<f64> {
        let st = self.unpack(y);
        let df_inv = -&st.f_inv * self.gamma_at(t);
        let dib = &st.f_inv * self.b_at(t);
        let fs = &st.f_inv * self.sigma_at(t);
        let dicov = &fs * fs.transpose();
        let mut out = Vec::with_capacity(y.len());
        out.extend(df_inv.iter());
        out.extend(dib.iter());
        out.extend(dicov.iter());
        out
    }

    /// Integrated state at time `t`, via the shared checkpoint cache.
    fn state_at(&self, t: f64) -> Result<OdeState> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(BridgeError::Time(format!(
                "t={t} outside [0, {}] for the linear system",
                self.horizon
            )));
        }
        let d = self.dim;
        let init = OdeState {
            f_inv: DMatrix::identity(d, d),
            ib: DVector::zeros(d),
            icov: DMatrix::zeros(d, d),
        };
        if t == 0.0 {
            return Ok(init);
        }

        let mut cache = self.cache.lock().expect("ode cache poisoned");
        if let Some((_, st)) = cache.iter().find(|(tc, _)| *tc == t) {
            return Ok(st.clone());
        }
        // start from the closest checkpoint below t
        let (t0, y0) = cache
            .iter()
            .filter(|(tc, _)| *tc < t)
            .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
            .map(|(tc, st)| (*tc, self.pack(st)))
            .unwrap_or((0.0, self.pack(&init)));

        let y = rk45(|u, y| self.derivative(u, y), t0, &y0, t, 1e-10, 1e-12)?;
        let st = self.unpack(&y);
        cache.push((t, st.clone()));
        Ok(st)
    }

    /// `(F(t), F⁻¹(t))` to the solver tolerance.
    pub fn fundamental_matrix(&self, t: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let st = self.state_at(t)?;
        let f = st
            .f_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| BridgeError::numerics("fundamental matrix not invertible"))?;
        Ok((f, st.f_inv))
    }

    /// Conditional mean `m(s,t,x) = F(t)F⁻¹(s)x + F(t)∫_s^t F⁻¹b du`.
    pub fn mean(&self, s: f64, t: f64, x: &[f64]) -> Result<DVector<f64>> {
        let st_s = self.state_at(s)?;
        let st_t = self.state_at(t)?;
        let f_t = st_t
            .f_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| BridgeError::numerics("fundamental matrix not invertible"))?;
        let xv = DVector::from_column_slice(x);
        Ok(&f_t * (&st_s.f_inv * xv) + &f_t * (&st_t.ib - &st_s.ib))
    }

    /// Conditional covariance `Σ(s,t) = F(t)[∫_s^t (F⁻¹σ)(F⁻¹σ)* du]F*(t)`.
    pub fn covariance(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let st_s = self.state_at(s)?;
        let st_t = self.state_at(t)?;
        let f_t = st_t
            .f_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| BridgeError::numerics("fundamental matrix not invertible"))?;
        let inner = &st_t.icov - &st_s.icov;
        let cov = &f_t * inner * f_t.transpose();
        // enforce exact symmetry against roundoff
        Ok(0.5 * (&cov + cov.transpose()))
    }

    /// The map `x ↦ ∂m(s,t,x)/∂x = F(t)F⁻¹(s)`.
    pub fn propagator(&self, s: f64, t: f64) -> Result<DMatrix<f64>> {
        let st_s = self.state_at(s)?;
        let st_t = self.state_at(t)?;
        let f_t = st_t
            .f_inv
            .clone()
            .try_inverse()
            .ok_or_else(|| BridgeError::numerics("fundamental matrix not invertible"))?;
        Ok(&f_t * &st_s.f_inv)
    }
}

/// Cholesky with a diagonal jitter retry on near-singular covariances.
pub fn cholesky_with_jitter(cov: &DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = Cholesky::new(cov.clone()) {
        return Ok(ch);
    }
    let d = cov.nrows();
    let jitter = 1e-12 * cov.trace() / d as f64;
    let bumped = cov + DMatrix::identity(d, d) * jitter.max(f64::MIN_POSITIVE);
    Cholesky::new(bumped).ok_or(BridgeError::SingularCov)
}

fn gaussian_log_pdf(y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = y.len();
    let ch = cholesky_with_jitter(cov)?;
    let diff = y - mean;
    let sol = ch.l().solve_lower_triangular(&diff).ok_or(BridgeError::SingularCov)?;
    let log_det: f64 = ch.l().diagonal().iter().map(|v| v.ln()).sum();
    Ok(-0.5 * sol.norm_squared() - log_det - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln())
}

struct GaussianKernel {
    lin: LinearSde,
}

impl TransitionKernel for GaussianKernel {
    fn log_density(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> f64 {
        let run = || -> Result<f64> {
            let mean = self.lin.mean(s, t, x)?;
            let cov = self.lin.covariance(s, t)?;
            gaussian_log_pdf(&DVector::from_column_slice(y), &mean, &cov)
        };
        run().unwrap_or(f64::NEG_INFINITY)
    }

    fn grad_log_x(&self, s: f64, t: f64, x: &[f64], y: &[f64]) -> Option<Vec<f64>> {
        let mean = self.lin.mean(s, t, x).ok()?;
        let cov = self.lin.covariance(s, t).ok()?;
        let prop = self.lin.propagator(s, t).ok()?;
        let ch = cholesky_with_jitter(&cov).ok()?;
        let resid = DVector::from_column_slice(y) - mean;
        let solved = ch.solve(&resid);
        Some((prop.transpose() * solved).iter().copied().collect())
    }

    fn sample(&self, s: f64, t: f64, x: &[f64], rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        let mean = self.lin.mean(s, t, x).ok()?;
        let cov = self.lin.covariance(s, t).ok()?;
        let ch = cholesky_with_jitter(&cov).ok()?;
        let z = DVector::from_fn(x.len(), |_, _| StandardNormal.sample(&mut *rng));
        let draw = mean + ch.l() * z;
        Some(draw.iter().copied().collect())
    }
}

/// Gaussian transition-density model for a linear SDE (Lebesgue reference).
pub fn gaussian_density_model(lin: &LinearSde) -> Result<DensityModel> {
    let d = lin.dim;
    let lin_drift = lin.clone();
    let lin_disp = lin.clone();
    let spec = DiffusionSpec::new(
        d,
        move |t, x| {
            let xv = DVector::from_column_slice(x);
            (lin_drift.b_at(t) + lin_drift.gamma_at(t) * xv).iter().copied().collect()
        },
        move |t, _x| lin_disp.sigma_at(t),
        DomainBox::unbounded(d),
    );
    Ok(DensityModel::new(
        spec,
        ReferenceMeasure::Lebesgue,
        false,
        "linear_gaussian",
        Arc::new(GaussianKernel { lin: lin.clone() }),
    ))
}

/// Bridge drift of the linear system pinned to `z` at the horizon:
/// `b(s) + γ(s)x + a(s)(F(T*)F⁻¹(s))*Σ⁻¹(s,T*)(z − m(s,T*,x))`.
pub fn gaussian_bridge_drift(lin: &LinearSde, s: f64, x: &[f64], z: &[f64]) -> Result<DVector<f64>> {
    let t_star = lin.horizon;
    if !(s < t_star) {
        return Err(BridgeError::Time(format!("need s < horizon, got s={s}, T*={t_star}")));
    }
    let mean = lin.mean(s, t_star, x)?;
    let cov = lin.covariance(s, t_star)?;
    let prop = lin.propagator(s, t_star)?;
    let ch = cholesky_with_jitter(&cov)?;
    let resid = DVector::from_column_slice(z) - mean;
    let grad_log_h = prop.transpose() * ch.solve(&resid);
    let xv = DVector::from_column_slice(x);
    Ok(lin.b_at(s) + lin.gamma_at(s) * xv + lin.a_at(s) * grad_log_h)
}

// Dormand–Prince 5(4) with PI-free proportional step control.
fn rk45<F: Fn(f64, &[f64]) -> Vec<f64>>(
    deriv: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<Vec<f64>> {
    const A: [[f64; 6]; 6] = [
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
    const B5: [f64; 7] =
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];

    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(y);
    }
    let mut h = span / 16.0;
    let mut steps = 0usize;

    while (t1 - t) * span.signum() > 0.0 {
        steps += 1;
        if steps > 100_000 {
            return Err(BridgeError::numerics("rk45: step budget exhausted"));
        }
        if (t + h - t1) * span.signum() > 0.0 {
            h = t1 - t;
        }

        let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
        k.push(deriv(t, &y));
        for stage in 0..6 {
            let mut ys = y.clone();
            for (j, kj) in k.iter().enumerate() {
                let a = A[stage][j];
                if a != 0.0 {
                    for i in 0..n {
                        ys[i] += h * a * kj[i];
                    }
                }
            }
            k.push(deriv(t + C[stage] * h, &ys));
        }

        let mut y5 = y.clone();
        let mut err_norm_sq = 0.0;
        for i in 0..n {
            let mut dy5 = 0.0;
            let mut dy4 = 0.0;
            for (j, kj) in k.iter().enumerate() {
                dy5 += B5[j] * kj[i];
                dy4 += B4[j] * kj[i];
            }
            y5[i] += h * dy5;
            let sc = abs_tol + rel_tol * y[i].abs().max(y5[i].abs());
            let e = h * (dy5 - dy4) / sc;
            err_norm_sq += e * e;
        }
        let err = (err_norm_sq / n as f64).sqrt();
        if !err.is_finite() {
            return Err(BridgeError::numerics("rk45: non-finite error estimate"));
        }

        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
        if h.abs() < 1e-14 * span.abs() {
            return Err(BridgeError::numerics("rk45: step size underflow"));
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_lin(g: f64) -> LinearSde {
        LinearSde::new(
            1,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::from_element(1, 0.0),
            move |_| DMatrix::from_element(1, 1, g),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_generator_gives_identity() {
        let lin = scalar_lin(0.0);
        let (f, f_inv) = lin.fundamental_matrix(0.7).unwrap();
        assert_relative_eq!(f[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(f_inv[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_generator_is_exponential() {
        let g = -0.8;
        let lin = scalar_lin(g);
        for &t in &[0.1, 0.5, 1.0] {
            let (f, f_inv) = lin.fundamental_matrix(t).unwrap();
            assert_relative_eq!(f[(0, 0)], (g * t).exp(), max_relative = 1e-10);
            assert_relative_eq!(f_inv[(0, 0)], (-g * t).exp(), max_relative = 1e-10);
        }
    }

    #[test]
    fn inverse_contract_at_random_times() {
        let lin = LinearSde::new(
            2,
            |t| DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.0, 0.8 + 0.1 * t]),
            |t| DVector::from_column_slice(&[t, -1.0]),
            |t| DMatrix::from_row_slice(2, 2, &[-0.5, 0.3 * t, 0.1, -1.0]),
            1.0,
        )
        .unwrap();
        let mut u = 0.37f64;
        for _ in 0..20 {
            u = (u * 997.0 + 0.123).fract();
            let t = 0.999 * u;
            let (f, f_inv) = lin.fundamental_matrix(t).unwrap();
            let prod = &f * &f_inv;
            for i in 0..2 {
                for j in 0..2 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((prod[(i, j)] - expect).abs() < 1e-10, "t={t}: {:?}", prod);
                }
            }
        }
    }

    #[test]
    fn brownian_specialisation_heat_kernel() {
        let lin = scalar_lin(0.0);
        let model = gaussian_density_model(&lin).unwrap();
        let p = model.density_between(0.0, 1.0, &[0.0], &[1.0]).unwrap();
        let expect = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(p, expect, max_relative = 1e-10);
    }

    #[test]
    fn matches_ou_builtin_density() {
        use crate::diffusion::{builtin_model, BuiltinSpec};
        let theta = 1.0;
        let lin = LinearSde::new(
            1,
            |_| DMatrix::from_element(1, 1, 2f64.sqrt()),
            |_| DVector::from_element(1, 0.0),
            move |_| DMatrix::from_element(1, 1, -theta),
            1.0,
        )
        .unwrap();
        let gm = gaussian_density_model(&lin).unwrap();
        let ou = builtin_model(&BuiltinSpec::Ou { theta, mean: 0.0, sigma: 2f64.sqrt() }).unwrap();
        for &(t, x, y) in &[(0.3, 0.5, -0.2), (0.9, -1.0, 1.0), (0.05, 2.0, 1.9)] {
            let a = gm.density_between(0.0, t, &[x], &[y]).unwrap();
            let b = ou.density(t, &[x], &[y]).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn mean_is_linear_in_state() {
        let lin = LinearSde::new(
            1,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::from_element(1, 0.7),
            |_| DMatrix::from_element(1, 1, -0.4),
            1.0,
        )
        .unwrap();
        let (s, t) = (0.2, 0.9);
        let m1 = lin.mean(s, t, &[1.0]).unwrap();
        let m2 = lin.mean(s, t, &[2.0]).unwrap();
        let prop = lin.propagator(s, t).unwrap();
        assert_relative_eq!(m2[0] - m1[0], prop[(0, 0)], max_relative = 1e-9);
    }

    #[test]
    fn brownian_bridge_drift_specialisation() {
        let lin = scalar_lin(0.0);
        let d = gaussian_bridge_drift(&lin, 0.5, &[0.2], &[0.0]).unwrap();
        assert_relative_eq!(d[0], -0.4, max_relative = 1e-10);
    }

    #[test]
    fn drift_vanishing_gradient_case() {
        // when m(s,T*,x) = z only b + γx remains
        let lin = LinearSde::new(
            1,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::from_element(1, 1.0),
            |_| DMatrix::from_element(1, 1, 0.0),
            1.0,
        )
        .unwrap();
        let s = 0.25;
        let x = 0.3;
        let z = lin.mean(s, 1.0, &[x]).unwrap()[0];
        let d = gaussian_bridge_drift(&lin, s, &[x], &[z]).unwrap();
        assert_relative_eq!(d[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn constant_b_drift_example() {
        // b=1, σ=1, γ=0, s=0, x=0, z=1, T*=1 → drift = 1 + (1 − 0 − 1)/1 = 1
        let lin = LinearSde::new(
            1,
            |_| DMatrix::from_element(1, 1, 1.0),
            |_| DVector::from_element(1, 1.0),
            |_| DMatrix::from_element(1, 1, 0.0),
            1.0,
        )
        .unwrap();
        let d = gaussian_bridge_drift(&lin, 0.0, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(d[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn chapman_kolmogorov_by_gaussian_algebra() {
        let lin = LinearSde::new(
            2,
            |t| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.9 + 0.05 * t]),
            |_| DVector::from_column_slice(&[0.2, -0.1]),
            |t| DMatrix::from_row_slice(2, 2, &[-0.3, 0.1, 0.0, -0.6 + 0.2 * t]),
            1.0,
        )
        .unwrap();
        let (s, t, u) = (0.1, 0.45, 0.92);
        let x = [0.4, -0.7];
        // mean composition
        let m_st = lin.mean(s, t, &x).unwrap();
        let m_su = lin.mean(s, u, &x).unwrap();
        let m_tu = lin.mean(t, u, m_st.as_slice()).unwrap();
        for i in 0..2 {
            assert_relative_eq!(m_su[i], m_tu[i], max_relative = 1e-8, epsilon = 1e-10);
        }
        // covariance composition Σ(s,u) = P Σ(s,t) P* + Σ(t,u), P = F(u)F⁻¹(t)
        let p = lin.propagator(t, u).unwrap();
        let lhs = lin.covariance(s, u).unwrap();
        let rhs = &p * lin.covariance(s, t).unwrap() * p.transpose() + lin.covariance(t, u).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(lhs[(i, j)], rhs[(i, j)], max_relative = 1e-8, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn covariance_increases_in_psd_order() {
        let lin = scalar_lin(-0.5);
        let c1 = lin.covariance(0.1, 0.5).unwrap();
        let c2 = lin.covariance(0.1, 0.9).unwrap();
        assert!(c2[(0, 0)] > c1[(0, 0)]);
        assert!(lin.covariance(0.3, 0.3).unwrap()[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn degenerate_dispersion_is_rejected() {
        let r = LinearSde::new(
            2,
            |_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            |_| DVector::zeros(2),
            |_| DMatrix::zeros(2, 2),
            1.0,
        );
        assert!(r.is_err());
    }
}
