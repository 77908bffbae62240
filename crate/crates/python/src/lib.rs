//! Python bindings: density models, bridges, ensembles, boundary
//! classification and the verification suites.

use bridgesim_core::config::ScenarioConfig;
use bridgesim_core::diffusion::{builtin_model, BuiltinSpec, DensityModel};
use bridgesim_core::h_engine::{BridgeProcess, HFunction, Region};
use bridgesim_core::integrator::{simulate_ensemble, PathEnsemble, Refinement, SimMethod, TimeGrid};
use bridgesim_core::scale_speed::{classify_boundary, Endpoint, ScaleFunction, SpeedDensity};
use bridgesim_core::verify::{self, Suite};
use bridgesim_core::BridgeError;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use std::sync::Arc;

fn err(e: BridgeError) -> PyErr {
    match e {
        BridgeError::Param(_) | BridgeError::Time(_) | BridgeError::Domain { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// A diffusion with a closed-form transition density.
#[pyclass(from_py_object)]
#[derive(Clone)]
struct Model {
    inner: DensityModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    #[pyo3(signature = (dim=1, drift=None, sigma=1.0))]
    fn brownian(dim: usize, drift: Option<Vec<f64>>, sigma: f64) -> PyResult<Self> {
        builtin_model(&BuiltinSpec::Brownian { dim, drift: drift.unwrap_or_default(), sigma })
            .map(|inner| Model { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (theta, mean=0.0, sigma=1.0))]
    fn ou(theta: f64, mean: f64, sigma: f64) -> PyResult<Self> {
        builtin_model(&BuiltinSpec::Ou { theta, mean, sigma })
            .map(|inner| Model { inner })
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (delta, speed_measure=false))]
    fn bessel(delta: f64, speed_measure: bool) -> PyResult<Self> {
        builtin_model(&BuiltinSpec::Bessel { delta, speed_measure })
            .map(|inner| Model { inner })
            .map_err(err)
    }

    #[staticmethod]
    fn geometric_bm(mu: f64, sigma: f64) -> PyResult<Self> {
        builtin_model(&BuiltinSpec::GeometricBm { mu, sigma })
            .map(|inner| Model { inner })
            .map_err(err)
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Transition density p(t, x, y).
    fn density(&self, t: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.density(t, &x, &y).map_err(err)
    }

    fn log_density(&self, t: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
        self.inner.log_density(t, &x, &y).map_err(err)
    }

    /// ∇_x log p(t, x, y).
    fn grad_log(&self, t: f64, x: Vec<f64>, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.grad_log(t, &x, &y).map_err(err)
    }

    /// Feller boundary classification at the reference point `c`.
    fn classify(&self, py: Python<'_>, c: f64) -> PyResult<Py<PyAny>> {
        let sf = ScaleFunction::new(self.inner.spec.clone(), c).map_err(err)?;
        let sd = SpeedDensity::new(sf);
        let mut out = Vec::new();
        for ep in [Endpoint::Lower, Endpoint::Upper] {
            let rep = classify_boundary(&sd, ep).map_err(err)?;
            let json = serde_json::to_string(&rep)
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
            out.push(json_to_py(py, &json)?);
        }
        let list = pyo3::types::PyList::new(py, &out)?;
        Ok(list.unbind().into())
    }

    /// Scale function s(x) anchored at s(c) = 0.
    fn scale(&self, c: f64, x: f64) -> PyResult<f64> {
        ScaleFunction::new(self.inner.spec.clone(), c).map_err(err)?.scale(x).map_err(err)
    }

    /// α-potential density u^α(x, y).
    fn potential_density(&self, alpha: f64, x: f64, y: f64) -> PyResult<f64> {
        verify::potential_density(&self.inner, alpha, x, y).map_err(err)
    }
}

fn json_to_py(py: Python<'_>, json: &str) -> PyResult<Py<PyAny>> {
    let loads = py.import("json")?.getattr("loads")?;
    Ok(loads.call1((json,))?.unbind())
}

/// A conditioned diffusion with its bridge drift and samplers.
#[pyclass]
struct Bridge {
    bp: Arc<BridgeProcess>,
}

#[pymethods]
impl Bridge {
    /// Strong conditioning: pin the terminal state to `z` at `t_star`.
    #[staticmethod]
    fn strong(model: Model, s: f64, x: Vec<f64>, t_star: f64, z: Vec<f64>) -> PyResult<Self> {
        BridgeProcess::strong(model.inner, s, x, t_star, z)
            .map(|bp| Bridge { bp: Arc::new(bp) })
            .map_err(err)
    }

    /// Indicator conditioning: terminal state in `[lower, upper]`.
    #[staticmethod]
    #[pyo3(signature = (model, s, x, t_star, lower=f64::NEG_INFINITY, upper=f64::INFINITY))]
    fn indicator(model: Model, s: f64, x: Vec<f64>, t_star: f64, lower: f64, upper: f64) -> PyResult<Self> {
        let h = HFunction::indicator(model.inner, s, x, t_star, Region::interval(lower, upper))
            .map_err(err)?;
        Ok(Bridge { bp: Arc::new(BridgeProcess::new(h)) })
    }

    /// Weak conditioning with a Gaussian tilt H(y) ∝ exp(−(y−mean)²/2sd²).
    #[staticmethod]
    #[pyo3(signature = (model, s, x, t_star, mean, sd, seed=0))]
    fn weak_gaussian_tilt(
        model: Model,
        s: f64,
        x: Vec<f64>,
        t_star: f64,
        mean: f64,
        sd: f64,
        seed: u64,
    ) -> PyResult<Self> {
        if sd <= 0.0 {
            return Err(PyValueError::new_err("sd must be positive"));
        }
        let support = Some((mean - 12.0 * sd, mean + 12.0 * sd));
        let h = HFunction::weak(
            model.inner,
            s,
            x,
            t_star,
            move |y: &[f64]| (-(y[0] - mean) * (y[0] - mean) / (2.0 * sd * sd)).exp(),
            support,
            seed,
        )
        .map_err(err)?;
        Ok(Bridge { bp: Arc::new(BridgeProcess::new(h)) })
    }

    /// Bridge drift b + a·∇h/h at (t, y).
    fn drift(&self, t: f64, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.bp.drift(t, &y).map_err(err)
    }

    /// h(t, y).
    fn h(&self, t: f64, y: Vec<f64>) -> PyResult<f64> {
        self.bp.h.eval(t, &y).map_err(err)
    }

    fn grad_log_h(&self, t: f64, y: Vec<f64>) -> PyResult<Vec<f64>> {
        self.bp.h.grad_log_h(t, &y).map_err(err)
    }

    /// Simulate an ensemble of bridge paths.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (n_paths, seed, n_steps=2000, gamma=2.0, delta_min=None, threads=None, method="euler"))]
    fn simulate(
        &self,
        n_paths: usize,
        seed: u64,
        n_steps: usize,
        gamma: f64,
        delta_min: Option<f64>,
        threads: Option<usize>,
        method: &str,
    ) -> PyResult<Ensemble> {
        let (s, _) = self.bp.start();
        let t_star = self.bp.horizon();
        let refinement =
            if gamma <= 1.0 { Refinement::Uniform } else { Refinement::Geometric(gamma) };
        let delta = delta_min.unwrap_or(1e-4 * (t_star - s));
        let grid = TimeGrid::new(s, t_star, n_steps, refinement, delta).map_err(err)?;
        let method = match method {
            "euler" => SimMethod::Euler,
            "exact_brownian_bridge" => SimMethod::ExactBrownianBridge,
            "exact_markov_bridge" => SimMethod::ExactMarkovBridge,
            other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
        };
        let ens = simulate_ensemble(&self.bp, &grid, n_paths, seed, threads, method).map_err(err)?;
        Ok(Ensemble { inner: ens })
    }
}

/// A simulated ensemble with its grid metadata.
#[pyclass]
struct Ensemble {
    inner: PathEnsemble,
}

#[pymethods]
impl Ensemble {
    #[getter]
    fn n_paths(&self) -> usize {
        self.inner.n_paths()
    }

    #[getter]
    fn failed_paths(&self) -> usize {
        self.inner.failed_paths
    }

    /// Grid times (excluding the separately stored terminal time).
    fn times(&self) -> Vec<f64> {
        self.inner.grid.nodes.clone()
    }

    /// All states of path `i`, one row per grid node.
    fn path(&self, i: usize) -> PyResult<Vec<Vec<f64>>> {
        self.inner
            .paths
            .get(i)
            .map(|p| p.states.clone())
            .ok_or_else(|| PyValueError::new_err(format!("path index {i} out of range")))
    }

    /// Scalar marginal at the grid node closest to `t` (1-D ensembles).
    fn marginal(&self, t: f64) -> Vec<f64> {
        self.inner.scalar_marginal(self.inner.grid.nearest_node(t))
    }

    /// Terminal states at T* (pinned or drawn).
    fn terminals(&self) -> Vec<f64> {
        self.inner.scalar_terminals()
    }

    /// Write the ensemble as CSV (`path_id,t,x_1,...`).
    #[pyo3(signature = (path, stride=1))]
    fn to_csv(&self, path: &str, stride: usize) -> PyResult<()> {
        let mut file = std::io::BufWriter::new(
            std::fs::File::create(path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
        );
        self.inner
            .write_csv(&mut file, stride)
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Run a named verification suite for a scenario config (JSON string);
/// returns the report list as Python objects.
#[pyfunction]
fn run_scenario_suite(py: Python<'_>, config_json: &str, suite: &str) -> PyResult<Py<PyAny>> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(err)?;
    let suite: Suite = suite.parse().map_err(err)?;
    let reports = verify::run_suite(&cfg, suite).map_err(err)?;
    let json = serde_json::to_string(&reports).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

/// Simulate the scenario described by a config JSON string.
#[pyfunction]
fn simulate_scenario(config_json: &str) -> PyResult<Ensemble> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(err)?;
    let bp = cfg.build_bridge().map_err(err)?;
    let grid = cfg.build_grid().map_err(err)?;
    let ens = simulate_ensemble(&bp, &grid, cfg.ensemble.n_paths, cfg.ensemble.master_seed, None, cfg.method)
        .map_err(err)?;
    Ok(Ensemble { inner: ens })
}

#[pymodule]
fn bridgesim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_class::<Bridge>()?;
    m.add_class::<Ensemble>()?;
    m.add_function(wrap_pyfunction!(run_scenario_suite, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scenario, m)?)?;
    Ok(())
}
