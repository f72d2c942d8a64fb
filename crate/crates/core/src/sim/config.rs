use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::perception::KeypointConfig;
use crate::trajectory::Arm;

/// Board layout, tool limits and rendering parameters. Lengths in metres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Positions 1, 2, 3 on the board plane.
    pub sites: [Vector3<f64>; 3],
    /// Where the peg changes hands.
    pub handoff: Vector3<f64>,
    /// Home tool tips, indexed left then right.
    pub home: [Vector3<f64>; 2],
    /// Shaft direction of each tool in the image plane, radians.
    pub tool_yaw: [f64; 2],
    pub grasp_radius: f64,
    pub place_radius: f64,
    pub dt: f64,
    pub v_max: f64,
    pub timeout: f64,
    pub image_size: usize,
    /// Half-width of the square board area seen by the scene camera.
    pub view_half_width: f64,
    /// Board millimetres → endoscope pixels, used by goal perception.
    pub camera: Matrix3<f64>,
    pub keypoints: KeypointConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        // 60 mm equilateral triangle centred on the origin
        let r = 0.06 / 3f64.sqrt();
        let site = |deg: f64| Vector3::new(r * deg.to_radians().cos(), r * deg.to_radians().sin(), 0.0);
        Self {
            sites: [site(330.0), site(210.0), site(90.0)],
            handoff: Vector3::new(0.0, -0.025, 0.005),
            home: [Vector3::new(-0.045, -0.045, 0.01), Vector3::new(0.045, -0.045, 0.01)],
            tool_yaw: [225f64.to_radians(), 315f64.to_radians()],
            grasp_radius: 0.003,
            place_radius: 0.003,
            dt: 0.01,
            v_max: 0.05,
            timeout: 120.0,
            image_size: 64,
            view_half_width: 0.05,
            camera: Matrix3::new(4.8, 0.35, 320.0, -0.25, 4.4, 240.0, 1.2e-4, 2.5e-4, 1.0),
            keypoints: KeypointConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.grasp_radius > 0.0 && self.place_radius > 0.0) {
            return bad("radii must be positive".into());
        }
        if !(self.dt > 0.0 && self.v_max >= 0.0 && self.timeout > 0.0) || self.image_size < 8 {
            return bad("invalid timing, speed or image size".into());
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if (self.sites[i] - self.sites[j]).norm() < 2.0 * self.place_radius {
                    return bad(format!("sites {} and {} coincide", i + 1, j + 1));
                }
            }
        }
        if self.camera.determinant().abs() < 1e-12 {
            return bad("camera projection is singular".into());
        }
        Ok(())
    }

    /// Site `n` for n ∈ {1, 2, 3}.
    pub fn site(&self, n: u8) -> Vector3<f64> {
        self.sites[n as usize - 1]
    }

    pub fn home_of(&self, arm: Arm) -> Vector3<f64> {
        self.home[arm.index()]
    }

    /// Board plane height (the sites share it).
    pub fn plane_height(&self) -> f64 {
        self.sites[0].z
    }

    /// Pixel of a board point in the endoscope image.
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        let v = self.camera * Vector3::new(p.x * 1000.0, p.y * 1000.0, 1.0);
        Vector2::new(v.x / v.z, v.y / v.z)
    }
}

fn ser_unbounded<S: Serializer>(w: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if w.is_finite() {
        s.serialize_some(w)
    } else {
        s.serialize_none()
    }
}

fn de_unbounded<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

/// Scripted stand-in for the operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HumanAgentConfig {
    /// Proportional gain toward the current subtarget, 1/s.
    pub gain: f64,
    /// Per-step intent noise, metres (slave side).
    pub noise: f64,
    /// Observation delay, control steps.
    pub reaction_delay: usize,
    /// Master workspace half-width; `null` in JSON means unbounded.
    #[serde(serialize_with = "ser_unbounded", deserialize_with = "de_unbounded")]
    pub workspace: f64,
    /// Seconds needed to re-centre the masters.
    pub clutch_time: f64,
    pub seed: u64,
}

impl Default for HumanAgentConfig {
    fn default() -> Self {
        Self { gain: 1.2, noise: 2e-5, reaction_delay: 15, workspace: 0.03, clutch_time: 0.6, seed: 0 }
    }
}

impl HumanAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.workspace > 0.0 && self.noise >= 0.0 && self.clutch_time >= 0.0) {
            return Err(Error::InvalidConfig(format!("invalid human agent config {self:?}")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_triangle() {
        let c = SimConfig::default();
        c.validate().unwrap();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!(((c.sites[i] - c.sites[j]).norm() - 0.06).abs() < 1e-12);
        }
        assert!((c.site(1) - Vector3::new(0.03, -0.06 / 3f64.sqrt() / 2.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn coincident_sites_rejected() {
        let mut c = SimConfig::default();
        c.sites[1] = c.sites[0];
        assert!(c.validate().is_err());
    }

    #[test]
    fn unbounded_workspace_round_trips() {
        let h = HumanAgentConfig { workspace: f64::INFINITY, ..Default::default() };
        let json = serde_json::to_string(&h).unwrap();
        assert!(json.contains("\"workspace\":null"));
        assert_eq!(serde_json::from_str::<HumanAgentConfig>(&json).unwrap(), h);
    }

    #[test]
    fn sites_project_inside_image() {
        let c = SimConfig::default();
        for s in &c.sites {
            let px = c.project(s);
            assert!(px.x > 0.0 && px.x < 640.0 && px.y > 0.0 && px.y < 480.0, "{px:?}");
        }
    }
}
