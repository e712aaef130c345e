//! Recursive least-squares estimators for B-coefficients.
//!
//! Three update rules share one state (`c`, `P`):
//!
//! * `rls_update`: plain RLS on `(x, y)` pairs.
//! * `rlstd_update`: RLSTD; the coefficient step uses the covariance from
//!   *before* the update.
//! * `rlstd_forget_update`: RLSTD with continuity-preserving directional
//!   forgetting, `+ beta2 * Z x x^T Z` added to the covariance, and the
//!   coefficient step using the covariance from *after* the update.
//!
//! `P` starts at `beta1 * Z` and every update term is built from `P` itself
//! or sandwiched by `Z`, so `P` stays confined to the null space of `H` and
//! `H c = 0` is preserved without any explicit projection.
//!
//! [`EstimatorState`] stores `c` and `P` densely in coefficient space.
//! [`ReducedEstimator`] stores the same quantities in coordinates of an
//! orthonormal null-space basis `N` (`P = N Q N^T`, `c = N theta`), which is
//! algebraically identical and far cheaper when `rank(H)` is large.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::continuity::NullSpaceProjector;
use crate::error::{Error, Result};
use crate::spline::BasisRow;

const MIN_DENOMINATOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Discount factor in `[0, 1)`.
    pub gamma: f64,
    /// Initial covariance scale, `P_1 = beta1 * Z`.
    pub beta1: f64,
    /// Directional forgetting gain.
    pub beta2: f64,
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidParam(format!("gamma = {} must lie in [0, 1)", self.gamma)));
        }
        if !(self.beta1 > 0.0 && self.beta1.is_finite()) {
            return Err(Error::InvalidParam(format!("beta1 = {} must be positive", self.beta1)));
        }
        if !(self.beta2 >= 0.0 && self.beta2.is_finite()) {
            return Err(Error::InvalidParam(format!("beta2 = {} must be non-negative", self.beta2)));
        }
        Ok(())
    }
}

/// Which temporal-difference update to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TdRule {
    Rlstd,
    RlstdForget,
}

/// Common interface of the dense and reduced estimators, as seen by the
/// learning loop.
pub trait ValueLearner: Send {
    fn coefficients(&self) -> &DVector<f64>;
    fn hyperparams(&self) -> Hyperparams;
    fn step_count(&self) -> u64;
    fn td_update(&mut self, rule: TdRule, x_t: &BasisRow, x_next: &BasisRow, reward: f64) -> Result<()>;
    /// Covariance in full coefficient space.
    fn covariance(&self) -> DMatrix<f64>;

    fn checkpoint(&self, space_fingerprint: &str) -> Checkpoint {
        let p = self.covariance();
        let n = p.nrows();
        Checkpoint {
            space_fingerprint: space_fingerprint.to_string(),
            ahat: n,
            hyper: self.hyperparams(),
            step_count: self.step_count(),
            c: self.coefficients().iter().copied().collect(),
            // row-major
            p: (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| p[(i, j)]).collect(),
        }
    }
}

fn check_finite(what: &str, values: impl IntoIterator<Item = f64>) -> Result<()> {
    if values.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::NumericalFailure(format!("non-finite {what}")))
    }
}

/// Dense estimator state in coefficient space.
#[derive(Debug, Clone)]
pub struct EstimatorState {
    pub c: DVector<f64>,
    pub p: DMatrix<f64>,
    pub projector: Arc<NullSpaceProjector>,
    pub hyper: Hyperparams,
    pub step_count: u64,
}

pub type DenseEstimator = EstimatorState;

impl EstimatorState {
    /// `c = 0`, `P = beta1 * Z`.
    pub fn init(projector: Arc<NullSpaceProjector>, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let n = projector.dim();
        Ok(EstimatorState {
            c: DVector::zeros(n),
            p: &projector.z * hyper.beta1,
            projector,
            hyper,
            step_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    fn finish(&mut self, p: DMatrix<f64>, c: DVector<f64>) -> Result<()> {
        check_finite("covariance", p.iter().copied())?;
        check_finite("coefficients", c.iter().copied())?;
        self.p = p;
        self.c = c;
        self.step_count += 1;
        Ok(())
    }

    /// `e = y - x^T c`, `P' = P - P x x^T P / (1 + x^T P x)`, `c' = c + P' x e`.
    pub fn rls_update(&mut self, x: &DVector<f64>, y: f64) -> Result<()> {
        check_finite("regressor", x.iter().copied().chain([y]))?;
        let e = y - x.dot(&self.c);
        let px = &self.p * x;
        let xp = self.p.tr_mul(x);
        let denom = 1.0 + x.dot(&px);
        if denom.abs() < MIN_DENOMINATOR {
            return Err(Error::NumericalFailure(format!(
                "RLS denominator {denom:e} at step {}",
                self.step_count
            )));
        }
        let mut p = self.p.clone();
        p.ger(-1.0 / denom, &px, &xp, 1.0);
        // P is symmetric in exact arithmetic; drop the rounding residue.
        let p = (&p + p.transpose()) * 0.5;
        let c = &self.c + (&p * x) * e;
        self.finish(p, c)
    }

    /// One RLSTD step with the covariance step-3 gain `P_t / q`.
    pub fn rlstd_update(&mut self, x_t: &DVector<f64>, x_next: &DVector<f64>, reward: f64) -> Result<()> {
        self.td_step(TdRule::Rlstd, x_t, x_next, reward)
    }

    /// One RLSTD step with directional forgetting and step-3 gain `P_{t+1}`.
    pub fn rlstd_forget_update(&mut self, x_t: &DVector<f64>, x_next: &DVector<f64>, reward: f64) -> Result<()> {
        self.td_step(TdRule::RlstdForget, x_t, x_next, reward)
    }

    fn td_step(&mut self, rule: TdRule, x_t: &DVector<f64>, x_next: &DVector<f64>, reward: f64) -> Result<()> {
        check_finite("regressor", x_t.iter().chain(x_next.iter()).copied().chain([reward]))?;
        let delta = x_t - x_next * self.hyper.gamma;
        let e = reward - delta.dot(&self.c);
        let px = &self.p * x_t;
        let dp = self.p.tr_mul(&delta);
        let q = 1.0 + delta.dot(&px);
        if q.abs() < MIN_DENOMINATOR || !q.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "RLSTD denominator {q:e} at step {}",
                self.step_count
            )));
        }
        let mut p = self.p.clone();
        p.ger(-1.0 / q, &px, &dp, 1.0);
        let c = match rule {
            TdRule::Rlstd => &self.c + &px * (e / q),
            TdRule::RlstdForget => {
                let zx = &self.projector.z * x_t;
                p.ger(self.hyper.beta2, &zx, &zx, 1.0);
                &self.c + (&p * x_t) * e
            }
        };
        self.finish(p, c)
    }

    pub fn from_checkpoint(cp: &Checkpoint, projector: Arc<NullSpaceProjector>, fingerprint: &str) -> Result<Self> {
        cp.check(fingerprint, projector.dim())?;
        let n = cp.ahat;
        Ok(EstimatorState {
            c: DVector::from_column_slice(&cp.c),
            p: DMatrix::from_row_slice(n, n, &cp.p),
            projector,
            hyper: cp.hyper,
            step_count: cp.step_count,
        })
    }
}

impl ValueLearner for EstimatorState {
    fn coefficients(&self) -> &DVector<f64> {
        &self.c
    }

    fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    fn step_count(&self) -> u64 {
        self.step_count
    }

    fn td_update(&mut self, rule: TdRule, x_t: &BasisRow, x_next: &BasisRow, reward: f64) -> Result<()> {
        let n = self.dim();
        self.td_step(rule, &x_t.to_dense(n), &x_next.to_dense(n), reward)
    }

    fn covariance(&self) -> DMatrix<f64> {
        self.p.clone()
    }
}

/// The estimator expressed in null-space coordinates.
#[derive(Debug, Clone)]
pub struct ReducedEstimator {
    // N^T, free x ahat; column j is row j of N.
    basis_t: Arc<DMatrix<f64>>,
    theta: DVector<f64>,
    q: DMatrix<f64>,
    c: DVector<f64>,
    hyper: Hyperparams,
    step_count: u64,
}

impl ReducedEstimator {
    pub fn init(projector: &NullSpaceProjector, hyper: Hyperparams) -> Result<Self> {
        hyper.validate()?;
        let free = projector.free_parameters();
        Ok(ReducedEstimator {
            basis_t: Arc::new(projector.basis.transpose()),
            theta: DVector::zeros(free),
            q: DMatrix::identity(free, free) * hyper.beta1,
            c: DVector::zeros(projector.dim()),
            hyper,
            step_count: 0,
        })
    }

    pub fn from_checkpoint(cp: &Checkpoint, projector: &NullSpaceProjector, fingerprint: &str) -> Result<Self> {
        cp.check(fingerprint, projector.dim())?;
        let n = cp.ahat;
        let basis = &projector.basis;
        let c = DVector::from_column_slice(&cp.c);
        let p = DMatrix::from_row_slice(n, n, &cp.p);
        let theta = basis.tr_mul(&c);
        let q = basis.tr_mul(&(p * basis));
        Ok(ReducedEstimator {
            basis_t: Arc::new(basis.transpose()),
            c: basis * &theta,
            theta,
            q,
            hyper: cp.hyper,
            step_count: cp.step_count,
        })
    }

    pub fn free_parameters(&self) -> usize {
        self.theta.len()
    }

    pub fn set_beta2(&mut self, beta2: f64) {
        self.hyper.beta2 = beta2;
    }

    fn project(&self, row: &BasisRow) -> DVector<f64> {
        let mut out = DVector::zeros(self.theta.len());
        for (k, v) in row.values.iter().enumerate() {
            out.axpy(*v, &self.basis_t.column(row.offset + k), 1.0);
        }
        out
    }
}

impl ValueLearner for ReducedEstimator {
    fn coefficients(&self) -> &DVector<f64> {
        &self.c
    }

    fn hyperparams(&self) -> Hyperparams {
        self.hyper
    }

    fn step_count(&self) -> u64 {
        self.step_count
    }

    fn td_update(&mut self, rule: TdRule, x_t: &BasisRow, x_next: &BasisRow, reward: f64) -> Result<()> {
        check_finite(
            "regressor",
            x_t.values.iter().chain(&x_next.values).copied().chain([reward]),
        )?;
        let gamma = self.hyper.gamma;
        let c = self.c.as_slice();
        let e = reward - (x_t.dot(c) - gamma * x_next.dot(c));

        let xt = self.project(x_t);
        let delta = &xt - self.project(x_next) * gamma;
        let qx = &self.q * &xt;
        let dq = self.q.tr_mul(&delta);
        let denom = 1.0 + delta.dot(&qx);
        if denom.abs() < MIN_DENOMINATOR || !denom.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "RLSTD denominator {denom:e} at step {}",
                self.step_count
            )));
        }
        self.q.ger(-1.0 / denom, &qx, &dq, 1.0);
        let step = match rule {
            TdRule::Rlstd => qx * (e / denom),
            TdRule::RlstdForget => {
                self.q.ger(self.hyper.beta2, &xt, &xt, 1.0);
                (&self.q * &xt) * e
            }
        };
        check_finite("coefficient step", step.iter().copied())?;
        self.theta += &step;
        self.c.gemv_tr(1.0, &self.basis_t, &step, 1.0);
        self.step_count += 1;
        Ok(())
    }

    fn covariance(&self) -> DMatrix<f64> {
        let n = self.basis_t.transpose();
        &n * &self.q * self.basis_t.as_ref()
    }
}

/// Serialized learner state, tied to a spline space by fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub space_fingerprint: String,
    pub ahat: usize,
    pub hyper: Hyperparams,
    pub step_count: u64,
    pub c: Vec<f64>,
    /// Row-major `ahat x ahat` covariance.
    pub p: Vec<f64>,
}

impl Checkpoint {
    fn check(&self, fingerprint: &str, ahat: usize) -> Result<()> {
        if self.space_fingerprint != fingerprint {
            return Err(Error::CheckpointMismatch(format!(
                "fingerprint {} differs from {fingerprint}",
                self.space_fingerprint
            )));
        }
        if self.ahat != ahat || self.c.len() != ahat || self.p.len() != ahat * ahat {
            return Err(Error::CheckpointMismatch(format!("checkpoint holds {} coefficients", self.ahat)));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
