//! Role adaptation and command blending between a human operator and the
//! learned autonomous motion.
//!
//! The blended slave increment is `ΔPs = τ·[α·ΔPh + (1 − α)·ΔPr]`. The
//! authority weight α follows the recognized context `c(t)` and the one
//! before it:
//!
//! | `ΔPc = P(c(t)) − P(c(t−1))` | `c(t) ∈ {1, 2}` | `c(t) = 0`        |
//! |-----------------------------|-----------------|-------------------|
//! | `< λ`                       | `P(c(t−1))`     | `1 − P(c(t−1))`   |
//! | `≥ λ`                       | `1`             | `0`               |
//!
//! Both probabilities are read from the current classifier output.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::context::ContextProbs;
use crate::error::{Error, Result};
use crate::trajectory::serde_wxyz;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Master-to-slave motion scaling τ.
    pub tau: f64,
    /// Context-switch threshold λ.
    pub lambda: f64,
    /// Slave speed cap, m/s.
    pub v_max: f64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self { tau: 0.5, lambda: 0.5, v_max: 0.05 }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.lambda > 0.0 && self.lambda < 1.0) || !(self.v_max >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid blend config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleState {
    pub prev_context: usize,
    pub alpha: f64,
}

impl Default for RoleState {
    /// Full human authority until the first classification.
    fn default() -> Self {
        Self { prev_context: 0, alpha: 1.0 }
    }
}

/// Slack on the ΔP ≥ λ comparison for floating-point rounding.
pub const BOUNDARY_EPS: f64 = 1e-12;

/// Updates α from one frame's context probabilities.
pub fn compute_alpha(probs: &ContextProbs, state: RoleState, lambda: f64) -> (f64, RoleState) {
    let c = probs.argmax();
    let p_prev = probs.get(state.prev_context);
    let dpc = probs.get(c) - p_prev;
    // ΔP = λ belongs to the switching branch even when the subtraction
    // rounds just below it
    let alpha = match (dpc >= lambda - BOUNDARY_EPS, c) {
        (false, 0) => 1.0 - p_prev,
        (false, _) => p_prev,
        (true, 0) => 0.0,
        (true, _) => 1.0,
    };
    (alpha, RoleState { prev_context: c, alpha })
}

pub fn blend(dph: &Vector3<f64>, dpr: &Vector3<f64>, alpha: f64, tau: f64) -> Vector3<f64> {
    (dph * alpha + dpr * (1.0 - alpha)) * tau
}

/// Scales `v` down to length `max` if it is longer.
pub fn cap(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max && n > 0.0 {
        v * (max / n)
    } else {
        v
    }
}

/// Pursuit of a polyline reference: the progress index only moves
/// forward, to the point nearest the current pose, and the increment heads
/// for the point after it.
pub fn robot_increment(
    reference: &[Vector3<f64>],
    pose: &Vector3<f64>,
    progress: usize,
    cfg: &BlendConfig,
    dt: f64,
) -> Result<(Vector3<f64>, usize)> {
    if reference.is_empty() {
        return Err(Error::Empty("reference"));
    }
    let last = reference.len() - 1;
    let mut best = progress.min(last);
    let mut best_d = (reference[best] - pose).norm_squared();
    for (k, p) in reference.iter().enumerate().skip(best + 1) {
        let d = (p - pose).norm_squared();
        if d < best_d {
            best = k;
            best_d = d;
        }
    }
    let target = reference[(best + 1).min(last)];
    let step = cap(target - pose, cfg.v_max * dt);
    Ok((step, best))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Manual,
    Autonomous,
    AdaptiveShared,
}

pub fn mode_of(alpha: f64) -> Result<ControlMode> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::OutOfRange(format!("α = {alpha}")));
    }
    Ok(if alpha == 1.0 {
        ControlMode::Manual
    } else if alpha == 0.0 {
        ControlMode::Autonomous
    } else {
        ControlMode::AdaptiveShared
    })
}

/// One arm's command for a control step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub dp: Vector3<f64>,
    #[serde(with = "serde_wxyz")]
    pub q: UnitQuaternion<f64>,
    pub grip: bool,
}

impl Command {
    pub fn hold(q: UnitQuaternion<f64>, grip: bool) -> Self {
        Self { dp: Vector3::zeros(), q, grip }
    }
}

/// Blends positions and caps the result at `v_max·dt`; orientation and
/// grip always come from the human.
pub fn compose_command(human: &Command, dpr: &Vector3<f64>, alpha: f64, cfg: &BlendConfig, dt: f64) -> Command {
    let dp = cap(blend(&human.dp, dpr, alpha, cfg.tau), cfg.v_max * dt);
    Command { dp, q: human.q, grip: human.grip }
}
