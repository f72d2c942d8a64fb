//! Time-stamped tool trajectories, the common currency of registration,
//! regression, movement primitives and episode logging.

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which surgical tool a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn index(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }
}

/// Serializes a unit quaternion as `[w, x, y, z]`.
pub mod serde_wxyz {
    use nalgebra::{Quaternion, UnitQuaternion};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(q: &UnitQuaternion<f64>, s: S) -> Result<S::Ok, S::Error> {
        [q.w, q.i, q.j, q.k].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<UnitQuaternion<f64>, D::Error> {
        let [w, x, y, z] = <[f64; 4]>::deserialize(d)?;
        let raw = Quaternion::new(w, x, y, z);
        if (raw.norm() - 1.0).abs() > 1e-9 {
            return Err(serde::de::Error::custom(format!(
                "quaternion norm {} is not 1",
                raw.norm()
            )));
        }
        Ok(UnitQuaternion::new_unchecked(raw))
    }
}

/// One tool pose sample. `grip == true` means the jaws are closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolSample {
    pub t: f64,
    pub p: Vector3<f64>,
    #[serde(with = "serde_wxyz")]
    pub q: UnitQuaternion<f64>,
    pub grip: bool,
}

impl ToolSample {
    pub fn new(t: f64, p: Vector3<f64>, q: UnitQuaternion<f64>, grip: bool) -> Self {
        Self { t, p, q, grip }
    }

    /// Builds a sample from a raw `(w, x, y, z)` quaternion, rejecting
    /// anything that is not unit length within 1e-9.
    pub fn from_raw(t: f64, p: [f64; 3], q: [f64; 4], grip: bool) -> Result<Self> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        if !((raw.norm() - 1.0).abs() <= 1e-9) {
            return Err(Error::InvalidTrajectory(format!(
                "quaternion norm {} at t = {t}",
                raw.norm()
            )));
        }
        Ok(Self::new(t, Vector3::from(p), UnitQuaternion::new_unchecked(raw), grip))
    }
}

/// An ordered, validated sequence of tool samples for one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory")]
pub struct Trajectory {
    arm: Arm,
    samples: Vec<ToolSample>,
}

#[derive(Deserialize)]
struct RawTrajectory {
    arm: Arm,
    samples: Vec<ToolSample>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;

    fn try_from(raw: RawTrajectory) -> Result<Self> {
        Trajectory::new(raw.arm, raw.samples)
    }
}

impl Trajectory {
    pub fn new(arm: Arm, samples: Vec<ToolSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidTrajectory(format!(
                "need at least 2 samples, got {}",
                samples.len()
            )));
        }
        for w in samples.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidTrajectory(format!(
                    "timestamps not strictly increasing at t = {}",
                    w[1].t
                )));
            }
        }
        for s in &samples {
            if !((s.q.as_ref().norm() - 1.0).abs() <= 1e-9) || !s.p.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidTrajectory(format!("invalid pose at t = {}", s.t)));
            }
        }
        Ok(Self { arm, samples })
    }

    /// Positions only, with identity orientation, open grip and uniform
    /// timestamps `dt` apart.
    pub fn from_positions(arm: Arm, positions: &[Vector3<f64>], dt: f64) -> Result<Self> {
        let samples = positions
            .iter()
            .enumerate()
            .map(|(i, p)| ToolSample::new(i as f64 * dt, *p, UnitQuaternion::identity(), false))
            .collect();
        Self::new(arm, samples)
    }

    pub fn arm(&self) -> Arm {
        self.arm
    }

    pub fn samples(&self) -> &[ToolSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.samples.iter().map(|s| s.p).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    pub fn duration(&self) -> f64 {
        self.samples[self.samples.len() - 1].t - self.samples[0].t
    }

    /// Keeps every `stride`-th sample plus the final one.
    pub fn decimate(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let last = self.samples.len() - 1;
        let mut out: Vec<ToolSample> = self.samples.iter().step_by(stride).copied().collect();
        if (last % stride) != 0 {
            out.push(self.samples[last]);
        }
        Self { arm: self.arm, samples: out }
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end > self.samples.len() || start >= end {
            return Err(Error::InvalidTrajectory(format!(
                "slice {start}..{end} of {}",
                self.samples.len()
            )));
        }
        Self::new(self.arm, self.samples[start..end].to_vec())
    }
}

/// Total polyline length of a position sequence.
pub fn path_length(points: &[Vector3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}
