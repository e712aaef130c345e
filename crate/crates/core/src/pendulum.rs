//! Stochastic pendulum swing-up dynamics, integrated with explicit Euler.
//!
//! `theta` is measured from the upright position. After each step `theta` is
//! wrapped into `[-pi, pi)` and the angular rate is clamped to `[-2pi, 2pi]`,
//! which keeps every state inside the rectangular value-function domain.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_RATE: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub g: f64,
    pub mu: f64,
    pub u_max: f64,
    /// Process-noise standard deviation, in the units of the angular
    /// acceleration (rad/s^2).
    pub sigma_w: f64,
    pub dt: f64,
    pub integrator: Integrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    /// `theta` advances with the rate from the start of the step.
    #[default]
    ExplicitEuler,
    /// `theta` advances with the updated rate; energy stays bounded.
    SemiImplicitEuler,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams { m: 1.0, l: 1.0, g: 9.8, mu: 0.01, u_max: 5.0, sigma_w: 0.0, dt: 0.02, integrator: Integrator::ExplicitEuler }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [("m", self.m), ("l", self.l), ("dt", self.dt), ("u_max", self.u_max), ("g", self.g)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("pendulum {name} = {v} must be positive")));
            }
        }
        for (name, v) in [("mu", self.mu), ("sigma_w", self.sigma_w)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParam(format!("pendulum {name} = {v} must be non-negative")));
            }
        }
        Ok(())
    }

    /// Partial derivative of the state derivative with respect to the torque.
    pub fn input_gain(&self) -> [f64; 2] {
        [0.0, 1.0 / (self.m * self.l * self.l)]
    }

    pub fn set_mass(&self, m_new: f64) -> Result<Self> {
        if !(m_new > 0.0 && m_new.is_finite()) {
            return Err(Error::InvalidParam(format!("mass {m_new} must be positive")));
        }
        Ok(PendulumParams { m: m_new, ..*self })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub thetadot: f64,
}

/// Outcome of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: PendulumState,
    /// True when the angular rate hit the domain clamp.
    pub clamped: bool,
}

impl PendulumState {
    pub fn new(theta: f64, thetadot: f64) -> Self {
        PendulumState { theta: wrap_angle(theta), thetadot: thetadot.clamp(-MAX_RATE, MAX_RATE) }
    }

    pub fn as_point(&self) -> [f64; 2] {
        [self.theta, self.thetadot]
    }

    /// Mechanical energy with the potential measured from the bottom.
    pub fn energy(&self, p: &PendulumParams) -> f64 {
        0.5 * p.m * p.l * p.l * self.thetadot * self.thetadot + p.m * p.g * p.l * (1.0 + self.theta.cos())
    }

    pub fn is_up(&self) -> bool {
        self.theta.abs() < PI / 4.0
    }

    /// One Euler step; `w_sample` is a standard normal draw scaled by
    /// `sigma_w`.
    pub fn step(&self, u: f64, w_sample: f64, p: &PendulumParams) -> StepResult {
        let inertia = p.m * p.l * p.l;
        let accel = p.g / p.l * self.theta.sin() - p.mu / inertia * self.thetadot
            + u / inertia
            + p.sigma_w * w_sample;
        let raw_rate = self.thetadot + p.dt * accel;
        let thetadot = raw_rate.clamp(-MAX_RATE, MAX_RATE);
        let rate = match p.integrator {
            Integrator::ExplicitEuler => self.thetadot,
            Integrator::SemiImplicitEuler => thetadot,
        };
        let theta = wrap_angle(self.theta + p.dt * rate);
        StepResult { state: PendulumState { theta, thetadot }, clamped: thetadot != raw_rate }
    }
}

/// Wraps an angle into `[-pi, pi)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = theta - two_pi * ((theta + PI) / two_pi).floor();
    if w >= PI {
        w -= two_pi;
    }
    if w < -PI {
        w = -PI;
    }
    w
}
