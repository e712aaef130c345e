//! Value-gradient policy and the swing-up reward.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spline::SplineView;

/// Largest admissible `|u| / u_max`; keeps the control cost finite.
pub const SATURATION: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub u_max: f64,
    pub c_cost: f64,
    pub tau: f64,
    pub sigma_n: f64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams { u_max: 5.0, c_cost: 0.1, tau: 1.0, sigma_n: 0.01 }
    }
}

impl PolicyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u_max > 0.0 && self.c_cost > 0.0 && self.sigma_n >= 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParam(format!("invalid policy parameters {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    pub c_x: f64,
    pub c_u: f64,
    /// Add the control term instead of subtracting it.
    pub sign_as_printed: bool,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams { c_x: 1.0, c_u: 0.1, sign_as_printed: false }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_x >= 0.0 && self.c_u >= 0.0) {
            return Err(Error::InvalidParam(format!("reward weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// Torque from the value gradient:
/// `u = u_max tanh(pi/2 * tau/c * <grad V(x), input_gain> + noise)`.
pub fn greedy_action(
    value: &SplineView<'_>,
    x: &[f64],
    p: &PolicyParams,
    input_gain: &[f64],
    noise_sample: f64,
) -> Result<f64> {
    let grad = value.gradient(x)?;
    let drive: f64 = grad.iter().zip(input_gain).map(|(g, b)| g * b).sum();
    Ok(action_from_drive(drive, p, noise_sample))
}

pub(crate) fn action_from_drive(drive: f64, p: &PolicyParams, noise_sample: f64) -> f64 {
    let arg = FRAC_PI_2 * p.tau / p.c_cost * drive + noise_sample;
    p.u_max * arg.tanh().clamp(-SATURATION, SATURATION)
}

/// `int_0^s tan(pi/2 sigma) d sigma = -(2/pi) ln cos(pi/2 s)` for `0 <= s < 1`.
pub fn control_cost_integral(s: f64) -> f64 {
    -(2.0 / PI) * (FRAC_PI_2 * s).cos().ln()
}

/// `c_x (cos theta - 1) - c_u int_0^{|u|/u_max} tan(pi/2 s) ds`.
pub fn reward(x_next: &[f64], u: f64, rp: &RewardParams, u_max: f64) -> f64 {
    let s = (u.abs() / u_max).min(SATURATION);
    let control = rp.c_u * control_cost_integral(s);
    let state = rp.c_x * (x_next[0].cos() - 1.0);
    if rp.sign_as_printed {
        state + control
    } else {
        state - control
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_reference_points() {
        let rp = RewardParams::default();
        assert_eq!(reward(&[0.0, 0.0], 0.0, &rp, 5.0), 0.0);
        assert!((reward(&[PI, 0.0], 0.0, &rp, 5.0) + 2.0).abs() < 1e-15);
        let half = reward(&[0.0, 0.0], 2.5, &rp, 5.0);
        let want = -0.1 * (2.0 / PI) * (0.5 * 2f64.ln());
        assert!((half - want).abs() < 1e-15);
        assert!((half + 0.02206).abs() < 1e-5);
    }

    #[test]
    fn reward_is_symmetric_in_torque_and_saturates() {
        let rp = RewardParams::default();
        assert_eq!(reward(&[0.3, 0.0], 1.2, &rp, 5.0), reward(&[0.3, 0.0], -1.2, &rp, 5.0));
        let sat = reward(&[0.0, 0.0], 5.0, &rp, 5.0);
        assert!(sat.is_finite() && sat < 0.0);
    }

    #[test]
    fn printed_sign_flips_control_term() {
        let rp = RewardParams { sign_as_printed: true, ..Default::default() };
        assert!(reward(&[0.0, 0.0], 2.5, &rp, 5.0) > 0.0);
    }

    #[test]
    fn action_is_bounded_and_signed() {
        let p = PolicyParams::default();
        assert_eq!(action_from_drive(0.0, &p, 0.0), 0.0);
        let big = action_from_drive(1e12, &p, 0.0);
        assert!(big < p.u_max && big > 0.999 * p.u_max);
        assert!(action_from_drive(-3.0, &p, 0.0) < 0.0);
    }
}
