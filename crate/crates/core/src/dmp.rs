//! Dynamic movement primitives: a goal-attracting spring-damper driven by
//! a phase-dependent forcing term learned from one demonstration.
//!
//! Transformation system (per dimension):
//!
//! ```text
//! γ·Ẍ = αz·(βz·(g − X) − γ·Ẋ) + (g − X₀)·F(s)
//! γ·ṡ = −αx·s
//! F(s) = Σ wᵢ Ψᵢ(s) s / Σ Ψᵢ(s),   Ψᵢ(s) = exp(−hᵢ (s − cᵢ)²)
//! ```
//!
//! so the stiffness is `Kp = αz·βz/γ` and the damping `Kv = αz`. With the
//! default `βz = αz/4` the unforced system is critically damped at γ = 1 s,
//! overdamped for longer and underdamped for shorter time scales.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Arm, ToolSample, Trajectory};

/// Amplitudes below this (meters) are treated as degenerate.
pub const AMPLITUDE_EPS: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpParams {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
    /// Temporal scaling γ, seconds.
    pub gamma: f64,
    /// Kernel centers in phase, descending.
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl DmpParams {
    /// `n` kernels centered at the phase reached at uniformly spaced times
    /// in `[0, γ]`, with widths from the spacing to the next center.
    pub fn new(alpha_z: f64, beta_z: f64, alpha_x: f64, gamma: f64, n: usize) -> Result<Self> {
        if !(alpha_z > 0.0 && beta_z > 0.0 && alpha_x > 0.0 && gamma > 0.0) || n == 0 {
            return Err(Error::InvalidConfig(format!(
                "DMP constants must be positive (αz={alpha_z}, βz={beta_z}, αx={alpha_x}, γ={gamma}, N={n})"
            )));
        }
        let centers: Vec<f64> = if n == 1 {
            vec![1.0]
        } else {
            (0..n).map(|i| (-alpha_x * i as f64 / (n - 1) as f64).exp()).collect()
        };
        let mut widths: Vec<f64> = centers.windows(2).map(|w| 1.0 / (2.0 * (w[1] - w[0]).powi(2))).collect();
        widths.push(widths.last().copied().unwrap_or(1.0));
        Ok(Self { alpha_z, beta_z, alpha_x, gamma, centers, widths })
    }

    /// αz = 25, βz = αz/4, αx = 8, 50 kernels.
    pub fn with_gamma(gamma: f64) -> Result<Self> {
        Self::new(25.0, 25.0 / 4.0, 8.0, gamma, 50)
    }

    pub fn kernel_count(&self) -> usize {
        self.centers.len()
    }

    pub fn stiffness(&self) -> f64 {
        self.alpha_z * self.beta_z / self.gamma
    }

    pub fn damping(&self) -> f64 {
        self.alpha_z
    }

    fn validate(&self) -> Result<()> {
        let ok = self.alpha_z > 0.0
            && self.beta_z > 0.0
            && self.alpha_x > 0.0
            && self.gamma > 0.0
            && !self.centers.is_empty()
            && self.centers.len() == self.widths.len()
            && self.widths.iter().all(|h| *h > 0.0 && h.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("malformed DMP parameters".into()))
        }
    }
}

/// Canonical-system phase `exp(−αx·t/γ)`.
pub fn phase_at(t: f64, params: &DmpParams) -> f64 {
    (-params.alpha_x * t / params.gamma).exp()
}

pub fn basis(s: f64, params: &DmpParams) -> Vec<f64> {
    params.centers.iter().zip(&params.widths).map(|(c, h)| (-h * (s - c).powi(2)).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmpModel {
    pub arm: Arm,
    pub params: DmpParams,
    /// One row per kernel, one column per spatial dimension.
    pub weights: Vec<[f64; 3]>,
    pub x0: Vector3<f64>,
    pub goal: Vector3<f64>,
    /// Dimensions fitted and rolled out without forcing.
    pub degenerate: [bool; 3],
}

impl DmpModel {
    pub fn amplitude(&self) -> Vector3<f64> {
        self.goal - self.x0
    }
}

/// Forcing term `F(s)` for all three dimensions.
pub fn forcing(model: &DmpModel, s: f64) -> Vector3<f64> {
    let psi = basis(s, &model.params);
    let denom: f64 = psi.iter().sum();
    if !(denom > 0.0) {
        return Vector3::zeros();
    }
    let mut out = Vector3::zeros();
    for (p, w) in psi.iter().zip(&model.weights) {
        for d in 0..3 {
            out[d] += w[d] * p;
        }
    }
    out * (s / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DegeneratePolicy {
    /// Any dimension with |g − x0| < ε is an error.
    #[default]
    Reject,
    /// Such dimensions get zero weights and no forcing.
    Flag,
}

fn finite_differences(t: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let mut v = vec![0.0; n];
    let mut a = vec![0.0; n];
    for i in 1..n - 1 {
        let (h1, h2) = (t[i] - t[i - 1], t[i + 1] - t[i]);
        v[i] = (x[i + 1] - x[i - 1]) / (h1 + h2);
        a[i] = 2.0 * ((x[i + 1] - x[i]) / h2 - (x[i] - x[i - 1]) / h1) / (h1 + h2);
    }
    v[0] = (x[1] - x[0]) / (t[1] - t[0]);
    v[n - 1] = (x[n - 1] - x[n - 2]) / (t[n - 1] - t[n - 2]);
    a[0] = a[1];
    a[n - 1] = a[n - 2];
    (v, a)
}

/// Learns forcing weights from a demonstration by locally weighted
/// regression, rejecting degenerate amplitudes.
pub fn fit_weights(demo: &Trajectory, params: &DmpParams) -> Result<DmpModel> {
    fit_weights_with(demo, params, DegeneratePolicy::Reject)
}

pub fn fit_weights_with(demo: &Trajectory, params: &DmpParams, policy: DegeneratePolicy) -> Result<DmpModel> {
    params.validate()?;
    if demo.len() < 3 {
        return Err(Error::InsufficientData(format!("DMP fit needs ≥ 3 samples, got {}", demo.len())));
    }
    let samples = demo.samples();
    let t0 = samples[0].t;
    let t: Vec<f64> = samples.iter().map(|s| s.t - t0).collect();
    let x0 = samples[0].p;
    let goal = samples[samples.len() - 1].p;
    let mut degenerate = [false; 3];
    for d in 0..3 {
        let amp = goal[d] - x0[d];
        if amp.abs() < AMPLITUDE_EPS {
            if policy == DegeneratePolicy::Reject {
                return Err(Error::DegenerateAmplitude { dim: d, amplitude: amp.abs() });
            }
            degenerate[d] = true;
        }
    }
    let phases: Vec<f64> = t.iter().map(|&ti| phase_at(ti, params)).collect();
    let psi: Vec<Vec<f64>> = phases.iter().map(|&s| basis(s, params)).collect();
    let (az, bz, g) = (params.alpha_z, params.beta_z, params.gamma);
    let n = params.kernel_count();
    let mut weights = vec![[0.0; 3]; n];
    for d in 0..3 {
        if degenerate[d] {
            continue;
        }
        let x: Vec<f64> = samples.iter().map(|s| s.p[d]).collect();
        let (v, a) = finite_differences(&t, &x);
        let amp = goal[d] - x0[d];
        let target: Vec<f64> =
            (0..x.len()).map(|k| (g * a[k] - az * (bz * (goal[d] - x[k]) - g * v[k])) / amp).collect();
        for i in 0..n {
            let mut num = 0.0;
            let mut den = 0.0;
            for k in 0..x.len() {
                let s = phases[k];
                num += psi[k][i] * s * target[k];
                den += psi[k][i] * s * s;
            }
            weights[i][d] = if den > 1e-300 { num / den } else { 0.0 };
        }
    }
    Ok(DmpModel { arm: demo.arm(), params: params.clone(), weights, x0, goal, degenerate })
}

/// Integration state of a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmpState {
    pub x: Vector3<f64>,
    pub v: Vector3<f64>,
    pub s: f64,
    pub t: f64,
}

struct Derivative {
    dx: Vector3<f64>,
    dv: Vector3<f64>,
    ds: f64,
}

fn derivative(model: &DmpModel, gamma: f64, scale: &Vector3<f64>, goal: &Vector3<f64>, st: &DmpState) -> Derivative {
    let p = &model.params;
    let f = forcing(model, st.s);
    let mut dv = Vector3::zeros();
    for d in 0..3 {
        dv[d] = (p.alpha_z * (p.beta_z * (goal[d] - st.x[d]) - gamma * st.v[d]) + scale[d] * f[d]) / gamma;
    }
    Derivative { dx: st.v, dv, ds: -p.alpha_x * st.s / gamma }
}

fn rk4_step(model: &DmpModel, gamma: f64, scale: &Vector3<f64>, goal: &Vector3<f64>, st: &DmpState, h: f64) -> DmpState {
    let shift = |d: &Derivative, k: f64| DmpState {
        x: st.x + d.dx * k,
        v: st.v + d.dv * k,
        s: st.s + d.ds * k,
        t: st.t + k,
    };
    let k1 = derivative(model, gamma, scale, goal, st);
    let k2 = derivative(model, gamma, scale, goal, &shift(&k1, h / 2.0));
    let k3 = derivative(model, gamma, scale, goal, &shift(&k2, h / 2.0));
    let k4 = derivative(model, gamma, scale, goal, &shift(&k3, h));
    DmpState {
        x: st.x + (k1.dx + k2.dx * 2.0 + k3.dx * 2.0 + k4.dx) * (h / 6.0),
        v: st.v + (k1.dv + k2.dv * 2.0 + k3.dv * 2.0 + k4.dv) * (h / 6.0),
        s: st.s + (k1.ds + 2.0 * k2.ds + 2.0 * k3.ds + k4.ds) * (h / 6.0),
        t: st.t + h,
    }
}

/// Rolls the model out toward a new start/goal pair with γ = `duration`,
/// over the same horizon.
pub fn rollout(model: &DmpModel, x0: Vector3<f64>, goal: Vector3<f64>, duration: f64, dt: f64) -> Result<Trajectory> {
    rollout_states(model, x0, goal, duration, duration, dt).and_then(|states| states_to_trajectory(model.arm, &states))
}

/// Fixed-step RK4 integration from rest at `x0` with temporal scaling
/// `gamma` until `horizon`; the final (possibly shorter) step lands
/// exactly on the horizon.
pub fn rollout_states(
    model: &DmpModel,
    x0: Vector3<f64>,
    goal: Vector3<f64>,
    gamma: f64,
    horizon: f64,
    dt: f64,
) -> Result<Vec<DmpState>> {
    if !(dt > 0.0) || !(horizon >= dt) || !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("rollout needs dt > 0 and horizon ≥ dt (dt={dt}, horizon={horizon})")));
    }
    let mut scale = goal - x0;
    for d in 0..3 {
        if model.degenerate[d] {
            scale[d] = 0.0;
        }
    }
    let steps = (horizon / dt).floor() as usize;
    let mut states = Vec::with_capacity(steps + 2);
    let mut st = DmpState { x: x0, v: Vector3::zeros(), s: 1.0, t: 0.0 };
    states.push(st);
    for k in 1..=steps {
        st = rk4_step(model, gamma, &scale, &goal, &st, dt);
        st.t = k as f64 * dt;
        states.push(st);
    }
    let rest = horizon - st.t;
    if rest > 1e-12 * horizon {
        st = rk4_step(model, gamma, &scale, &goal, &st, rest);
        st.t = horizon;
        states.push(st);
    }
    Ok(states)
}

fn states_to_trajectory(arm: Arm, states: &[DmpState]) -> Result<Trajectory> {
    let samples = states.iter().map(|s| ToolSample::new(s.t, s.x, UnitQuaternion::identity(), false)).collect();
    Trajectory::new(arm, samples)
}
