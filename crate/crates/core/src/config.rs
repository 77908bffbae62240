//! Scenario configuration: one JSON document describing a model, a
//! conditioning, a grid, and an ensemble, plus builders that assemble the
//! corresponding bridge objects.

use crate::diffusion::{builtin_model, BuiltinSpec, DensityModel};
use crate::error::{BridgeError, Result};
use crate::h_engine::{BridgeProcess, HFunction, Region};
use crate::integrator::{Refinement, SimMethod, TimeGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningSpec {
    /// pin the terminal state to `z`
    Strong { z: Vec<f64> },
    /// condition the terminal state into `[lower, upper]`; a missing bound
    /// means the interval is unbounded on that side
    Indicator { lower: Option<f64>, upper: Option<f64> },
    /// weak conditioning with a Gaussian tilt `H(y) ∝ exp(−(y−mean)²/2 sd²)`
    WeakGaussianTilt { mean: f64, sd: f64 },
    /// weak conditioning with `H ≡ 1` (null control: unconditioned law)
    WeakUniform,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StartSpec {
    pub s: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GridSpec {
    #[serde(default = "default_refinement")]
    pub refinement: Refinement,
    #[serde(default = "default_grid_n")]
    pub n: usize,
    /// distance of the last node from T*; default 1e−4·(T*−s)
    #[serde(default)]
    pub delta_min: Option<f64>,
}

fn default_refinement() -> Refinement {
    Refinement::Geometric(2.0)
}

fn default_grid_n() -> usize {
    2000
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { refinement: default_refinement(), n: default_grid_n(), delta_min: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnsembleSpec {
    #[serde(default = "default_n_paths")]
    pub n_paths: usize,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_n_paths() -> usize {
    1000
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        EnsembleSpec { n_paths: default_n_paths(), master_seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OutputSpec {
    #[serde(default = "default_true")]
    pub paths: bool,
    #[serde(default = "default_stride")]
    pub stride: usize,
    #[serde(default = "default_true")]
    pub reports: bool,
    #[serde(default)]
    pub dir: Option<String>,
}

fn default_true() -> bool {
    true
}

fn default_stride() -> usize {
    1
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { paths: true, stride: 1, reports: true, dir: None }
    }
}

/// One simulation/verification scenario.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScenarioConfig {
    pub model: BuiltinSpec,
    pub conditioning: ConditioningSpec,
    pub start: StartSpec,
    pub horizon: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
    #[serde(default = "default_method")]
    pub method: SimMethod,
}

fn default_method() -> SimMethod {
    SimMethod::Euler
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)
            .map_err(|e| BridgeError::param(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.horizon.is_finite() || !(self.start.s < self.horizon) {
            return Err(BridgeError::param("need start.s < horizon < ∞"));
        }
        if self.start.x.iter().any(|v| !v.is_finite()) {
            return Err(BridgeError::param("start state must be finite"));
        }
        if let Some(d) = self.grid.delta_min {
            if !(d > 0.0 && d < self.horizon - self.start.s) {
                return Err(BridgeError::param("grid.delta_min outside (0, horizon - s)"));
            }
        }
        if self.ensemble.n_paths == 0 {
            return Err(BridgeError::param("ensemble.n_paths must be positive"));
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<DensityModel> {
        builtin_model(&self.model)
    }

    pub fn build_h(&self, model: DensityModel) -> Result<HFunction> {
        let (s, x) = (self.start.s, self.start.x.clone());
        let t_star = self.horizon;
        match &self.conditioning {
            ConditioningSpec::Strong { z } => HFunction::strong(model, s, x, t_star, z.clone()),
            ConditioningSpec::Indicator { lower, upper } => {
                let region = Region::interval(
                    lower.unwrap_or(f64::NEG_INFINITY),
                    upper.unwrap_or(f64::INFINITY),
                );
                HFunction::indicator(model, s, x, t_star, region)
            }
            ConditioningSpec::WeakGaussianTilt { mean, sd } => {
                let (m, sd) = (*mean, *sd);
                if !(sd > 0.0) {
                    return Err(BridgeError::param("weak tilt needs sd > 0"));
                }
                let support = Some((m - 12.0 * sd, m + 12.0 * sd));
                HFunction::weak(
                    model,
                    s,
                    x,
                    t_star,
                    move |y: &[f64]| (-(y[0] - m) * (y[0] - m) / (2.0 * sd * sd)).exp(),
                    support,
                    self.ensemble.master_seed,
                )
            }
            ConditioningSpec::WeakUniform => HFunction::weak(
                model,
                s,
                x,
                t_star,
                |_| 1.0,
                Some((f64::NEG_INFINITY, f64::INFINITY)),
                self.ensemble.master_seed,
            ),
        }
    }

    pub fn build_bridge(&self) -> Result<BridgeProcess> {
        let model = self.build_model()?;
        Ok(BridgeProcess::new(self.build_h(model)?))
    }

    pub fn build_grid(&self) -> Result<TimeGrid> {
        let span = self.horizon - self.start.s;
        let delta = self.grid.delta_min.unwrap_or(1e-4 * span);
        TimeGrid::new(self.start.s, self.horizon, self.grid.n, self.grid.refinement, delta)
    }
}
