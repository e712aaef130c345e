//! TOML run configuration with every default baked in.
//!
//! ```toml
//! [spline]
//! degree = 4
//! continuity = 1
//! grid_cells = [4, 4]        # uniform grid over theta x thetadot
//! # theta_breaks = [...]     # explicit breaks override grid_cells
//! # triangulation = "mesh.json"
//!
//! [learning]
//! gamma = 0.98
//! beta1 = 10.0
//! beta2 = 0.4
//! backend = "reduced"        # or "dense"
//!
//! [policy]
//! tau = 1.0
//! c_cost = 0.1
//! sigma_n = 0.01
//!
//! [reward]
//! c_x = 1.0
//! c_u = 0.1
//! sign_as_printed = false
//!
//! [pendulum]
//! m = 1.0
//! sigma_w = 0.0
//!
//! [experiment]
//! trials = 100
//! trial_length = 20.0
//! pretrain_trials = 1000
//! mass_after = 1.5
//! master_seed = 0
//! ```

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::continuity::{build_smoothness_matrix, null_space_projector, NullSpaceProjector, SmoothnessMatrix};
use crate::control::{PolicyParams, RewardParams};
use crate::error::{Error, Result};
use crate::estimator::Hyperparams;
use crate::geometry::Triangulation;
use crate::pendulum::{PendulumParams, MAX_RATE};
use crate::spline::SplineSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineConfig {
    pub degree: usize,
    pub continuity: usize,
    pub grid_cells: [usize; 2],
    pub theta_breaks: Option<Vec<f64>>,
    pub thetadot_breaks: Option<Vec<f64>>,
    pub triangulation: Option<PathBuf>,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig {
            degree: 4,
            continuity: 1,
            grid_cells: [4, 4],
            theta_breaks: None,
            thetadot_breaks: None,
            triangulation: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Null-space coordinates; same algebra, much cheaper per step.
    Reduced,
    /// Full coefficient-space covariance.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningConfig {
    pub gamma: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub backend: Backend,
}

impl Default for LearningConfig {
    fn default() -> Self {
        LearningConfig { gamma: 0.98, beta1: 10.0, beta2: 0.4, backend: Backend::Reduced }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub tau: f64,
    pub c_cost: f64,
    pub sigma_n: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let p = PolicyParams::default();
        PolicyConfig { tau: p.tau, c_cost: p.c_cost, sigma_n: p.sigma_n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub trials: usize,
    pub trial_length: f64,
    pub pretrain_trials: usize,
    pub mass_after: f64,
    pub master_seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings { trials: 100, trial_length: 20.0, pretrain_trials: 1000, mass_after: 1.5, master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub spline: SplineConfig,
    pub learning: LearningConfig,
    pub policy: PolicyConfig,
    pub reward: RewardParams,
    pub pendulum: PendulumParams,
    pub experiment: ExperimentSettings,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative mesh paths are resolved against the config file.
        if let (Some(mesh), Some(dir)) = (cfg.spline.triangulation.as_mut(), path.parent()) {
            if mesh.is_relative() {
                *mesh = dir.join(&*mesh);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.spline.degree == 0 || self.spline.continuity >= self.spline.degree {
            return bad(format!(
                "need 0 <= continuity < degree, got r = {} d = {}",
                self.spline.continuity, self.spline.degree
            ));
        }
        if self.spline.grid_cells.contains(&0) {
            return bad("grid_cells entries must be positive".into());
        }
        self.hyperparams().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.pendulum.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.policy_params().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.reward.validate().map_err(|e| Error::Config(e.to_string()))?;
        let steps = self.experiment.trial_length / self.pendulum.dt;
        if !(steps >= 1.0 && (steps - steps.round()).abs() < 1e-9) {
            return bad(format!(
                "trial_length {} is not an integral number of {} s steps",
                self.experiment.trial_length, self.pendulum.dt
            ));
        }
        if !(self.experiment.mass_after > 0.0) {
            return bad("mass_after must be positive".into());
        }
        Ok(())
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams { gamma: self.learning.gamma, beta1: self.learning.beta1, beta2: self.learning.beta2 }
    }

    pub fn policy_params(&self) -> PolicyParams {
        PolicyParams {
            u_max: self.pendulum.u_max,
            c_cost: self.policy.c_cost,
            tau: self.policy.tau,
            sigma_n: self.policy.sigma_n,
        }
    }

    pub fn trial_steps(&self) -> usize {
        (self.experiment.trial_length / self.pendulum.dt).round() as usize
    }

    pub fn triangulation(&self) -> Result<Triangulation> {
        if let Some(path) = &self.spline.triangulation {
            return Triangulation::load(path);
        }
        let uniform = |lo: f64, hi: f64, cells: usize| -> Vec<f64> {
            (0..=cells).map(|k| lo + (hi - lo) * k as f64 / cells as f64).collect()
        };
        let theta = self.spline.theta_breaks.clone().unwrap_or_else(|| uniform(-PI, PI, self.spline.grid_cells[0]));
        let thetadot = self
            .spline
            .thetadot_breaks
            .clone()
            .unwrap_or_else(|| uniform(-MAX_RATE, MAX_RATE, self.spline.grid_cells[1]));
        Triangulation::grid(&theta, &thetadot)
    }

    pub fn build_space(&self) -> Result<LearningSetup> {
        let tri = Arc::new(self.triangulation()?);
        let space = Arc::new(SplineSpace::new(tri, self.spline.degree, self.spline.continuity)?);
        LearningSetup::new(space)
    }
}

/// A spline space with its smoothness matrix and null-space projector.
#[derive(Debug, Clone)]
pub struct LearningSetup {
    pub space: Arc<SplineSpace>,
    pub smoothness: Arc<SmoothnessMatrix>,
    pub projector: Arc<NullSpaceProjector>,
    pub fingerprint: String,
}

impl LearningSetup {
    pub fn new(space: Arc<SplineSpace>) -> Result<Self> {
        let smoothness = build_smoothness_matrix(&space)?;
        let projector = null_space_projector(&smoothness.h)?;
        let fingerprint = space.fingerprint();
        Ok(LearningSetup { space, smoothness: Arc::new(smoothness), projector: Arc::new(projector), fingerprint })
    }
}
