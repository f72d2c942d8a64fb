//! Turns the learned desired trajectory into per-phase movement primitives
//! and replays them toward perceived goals.

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::state::{SimState, TaskPhase};
use crate::dmp::{fit_weights_with, rollout, DegeneratePolicy, DmpModel, DmpParams};
use crate::error::{Error, Result};
use crate::gpr::DesiredTrajectory;
use crate::perception::{
    cluster_centers, estimate_board_homography, generate_keypoints, gmm_fit, image_to_world, select_goal, GmmConfig,
};
use crate::shared_control::{robot_increment, BlendConfig};
use crate::trajectory::{Arm, ToolSample, Trajectory};

/// Radius around a waypoint inside which the reference counts as there.
const WAYPOINT_RADIUS: f64 = 0.004;
/// Densification spacing of the reference before segmentation.
const DENSE_SPACING: f64 = 0.0005;

/// Movement primitives of both arms, one per protocol segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotPlan {
    pub left: Vec<DmpModel>,
    pub right: Vec<DmpModel>,
}

impl RobotPlan {
    pub fn segments(&self, arm: Arm) -> &[DmpModel] {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for arm in Arm::BOTH {
            let want = segment_count(arm);
            if self.segments(arm).len() != want {
                return Err(Error::SizeMismatch { expected: want, got: self.segments(arm).len() });
            }
        }
        Ok(())
    }
}

pub fn segment_count(arm: Arm) -> usize {
    match arm {
        Arm::Left => 4,
        Arm::Right => 5,
    }
}

/// Which primitive drives an arm during a phase; `None` holds still.
pub fn segment_for(arm: Arm, phase: TaskPhase) -> Option<usize> {
    use TaskPhase::*;
    match (arm, phase) {
        (_, Done) => None,
        (Arm::Right, RApproach1 | RGrasp) => Some(0),
        (Arm::Right, RToHandoff | Handoff) => Some(1),
        (Arm::Right, LTo2 | LPlace2 | LGrasp2 | LTo3 | LPlace3) => Some(2),
        (Arm::Right, RGrasp3) => Some(3),
        (Arm::Right, RTo1 | RPlace1) => Some(4),
        (Arm::Left, RApproach1 | RGrasp) => None,
        (Arm::Left, RToHandoff | Handoff) => Some(0),
        (Arm::Left, LTo2 | LPlace2 | LGrasp2) => Some(1),
        (Arm::Left, LTo3 | LPlace3) => Some(2),
        (Arm::Left, RGrasp3 | RTo1 | RPlace1) => Some(3),
    }
}

/// Goal of every segment, given where the sites are believed to be.
pub fn segment_goals(arm: Arm, cfg: &SimConfig, sites: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
    match arm {
        Arm::Right => vec![sites[0], cfg.handoff, cfg.home_of(Arm::Right), sites[2], sites[0]],
        Arm::Left => vec![cfg.handoff, sites[1], sites[2], cfg.home_of(Arm::Left)],
    }
}

/// Resamples a polyline at equal arc length; both ends kept.
pub fn resample_arc(points: &[Vector3<f64>], spacing: f64) -> Vec<Vector3<f64>> {
    let Some(first) = points.first() else { return Vec::new() };
    let mut out = vec![*first];
    if !(spacing > 0.0) {
        out.extend_from_slice(&points[1..]);
        return out;
    }
    let mut carry = 0.0;
    for w in points.windows(2) {
        let seg = (w[1] - w[0]).norm();
        let mut s = spacing - carry;
        while s <= seg {
            out.push(w[0] + (w[1] - w[0]) * (s / seg));
            s += spacing;
        }
        carry = seg - (s - spacing);
    }
    let last = points[points.len() - 1];
    if (out[out.len() - 1] - last).norm() > 1e-12 {
        out.push(last);
    }
    out
}

/// Densified reference polyline with its time stamps.
fn densify(points: &[Vector3<f64>], times: &[f64]) -> (Vec<Vector3<f64>>, Vec<f64>) {
    let mut p = vec![points[0]];
    let mut t = vec![times[0]];
    for k in 1..points.len() {
        let n = ((points[k] - points[k - 1]).norm() / DENSE_SPACING).ceil().max(1.0) as usize;
        for j in 1..=n {
            let u = j as f64 / n as f64;
            p.push(points[k - 1] + (points[k] - points[k - 1]) * u);
            t.push(times[k - 1] + (times[k] - times[k - 1]) * u);
        }
    }
    (p, t)
}

/// Index ranges of the reference between consecutive waypoints: each runs
/// from leaving one waypoint's neighbourhood to entering the next one's.
pub fn segment_bounds(points: &[Vector3<f64>], waypoints: &[Vector3<f64>]) -> Result<Vec<(usize, usize)>> {
    if points.len() < 2 || waypoints.len() < 2 {
        return Err(Error::InsufficientData("segmentation needs a reference and ≥ 2 waypoints".into()));
    }
    let near = |k: usize, w: &Vector3<f64>| (points[k] - w).norm() < WAYPOINT_RADIUS;
    // arrival index at every waypoint, searched forward
    let mut arrive = vec![0usize];
    for w in &waypoints[1..] {
        let from = arrive[arrive.len() - 1] + 1;
        if from >= points.len() {
            return Err(Error::InsufficientData("reference ends before all waypoints".into()));
        }
        let k = (from..points.len()).find(|&k| near(k, w)).unwrap_or_else(|| {
            (from..points.len()).min_by(|&a, &b| (points[a] - w).norm().total_cmp(&(points[b] - w).norm())).unwrap()
        });
        arrive.push(k);
    }
    let mut bounds = Vec::with_capacity(waypoints.len() - 1);
    for j in 0..waypoints.len() - 1 {
        let (a, b) = (arrive[j], arrive[j + 1]);
        let start = (a..b).rev().find(|&k| near(k, &waypoints[j])).unwrap_or(a);
        bounds.push((start.min(b.saturating_sub(2)), b));
    }
    Ok(bounds)
}

/// Segments the learned reference of both arms at the protocol waypoints
/// and fits one primitive per segment, γ set to the segment's duration.
pub fn plan_from_desired(desired: &DesiredTrajectory, cfg: &SimConfig, params: &DmpParams) -> Result<RobotPlan> {
    let mut out = RobotPlan { left: Vec::new(), right: Vec::new() };
    for arm in Arm::BOTH {
        let reference = desired.arm(arm).ok_or_else(|| Error::MissingModel(format!("{arm:?} desired trajectory")))?;
        let times: Vec<f64> = desired.grid.iter().map(|g| g * desired.duration).collect();
        let (points, stamps) = densify(&reference.mean, &times);
        let mut waypoints = vec![cfg.home_of(arm)];
        waypoints.extend(segment_goals(arm, cfg, &cfg.sites));
        let mut models = Vec::new();
        for (a, b) in segment_bounds(&points, &waypoints)? {
            let duration = stamps[b] - stamps[a];
            let samples = (a..=b)
                .map(|k| ToolSample::new(stamps[k] - stamps[a], points[k], UnitQuaternion::identity(), false))
                .collect();
            let demo = Trajectory::new(arm, samples)?;
            let p = DmpParams { gamma: duration, ..params.clone() };
            models.push(fit_weights_with(&demo, &p, DegeneratePolicy::Flag)?);
        }
        match arm {
            Arm::Left => out.left = models,
            Arm::Right => out.right = models,
        }
    }
    out.validate()?;
    Ok(out)
}

/// Planar calibration grid, board millimetres.
pub fn calibration_grid() -> Vec<Vector2<f64>> {
    let mut g = Vec::new();
    for j in -2..=2 {
        for i in -3..=3 {
            g.push(Vector2::new(i as f64 * 12.0, j as f64 * 12.0));
        }
    }
    g
}

/// Site positions as seen by the camera: keypoints clustered by a GMM
/// with a clutter component, mapped to the board through a grid-calibrated
/// homography.
pub fn perceive_sites(cfg: &SimConfig, seed: u64) -> Result<[Vector3<f64>; 3]> {
    let pairs: Vec<_> = calibration_grid().into_iter().map(|b| (cfg.project(&Vector3::new(b.x / 1000.0, b.y / 1000.0, 0.0)), b)).collect();
    let fit = estimate_board_homography(&pairs, cfg.plane_height())?;
    let site_px: Vec<_> = cfg.sites.iter().map(|s| cfg.project(s)).collect();
    let kp = generate_keypoints(&site_px, &cfg.keypoints, seed);
    // one extra component soaks up the uniform clutter; the three heaviest are the sites
    let gmm = gmm_fit(&kp.points, 4, &GmmConfig { seed, ..Default::default() })?;
    let centers = cluster_centers(&gmm)
        .iter()
        .take(3)
        .map(|c| image_to_world(&fit.transform, c))
        .collect::<Result<Vec<_>>>()?;
    let mut out = [Vector3::zeros(); 3];
    for (o, s) in out.iter_mut().zip(&cfg.sites) {
        *o = select_goal(&centers, s)?;
    }
    Ok(out)
}

/// Per-episode replay of the plan: a fresh rollout from the current pose
/// whenever an arm enters a new segment.
#[derive(Debug, Clone)]
pub struct RobotTracker {
    plan: RobotPlan,
    goals: [Vec<Vector3<f64>>; 2],
    active: [Option<usize>; 2],
    reference: [Vec<Vector3<f64>>; 2],
    progress: [usize; 2],
}

impl RobotTracker {
    pub fn new(plan: &RobotPlan, cfg: &SimConfig, sites: &[Vector3<f64>; 3]) -> Result<Self> {
        plan.validate()?;
        Ok(Self {
            plan: plan.clone(),
            goals: [segment_goals(Arm::Left, cfg, sites), segment_goals(Arm::Right, cfg, sites)],
            active: [None; 2],
            reference: [Vec::new(), Vec::new()],
            progress: [0; 2],
        })
    }

    pub fn reference(&self, arm: Arm) -> &[Vector3<f64>] {
        &self.reference[arm.index()]
    }

    /// Robot increments ΔPr for both arms (master units, capped at v_max·dt).
    pub fn increment(&mut self, state: &SimState, cfg: &SimConfig, blend: &BlendConfig) -> Result<[Vector3<f64>; 2]> {
        let mut out = [Vector3::zeros(); 2];
        for arm in Arm::BOTH {
            let i = arm.index();
            let seg = segment_for(arm, state.phase);
            if seg != self.active[i] {
                self.active[i] = seg;
                self.progress[i] = 0;
                self.reference[i] = match seg {
                    None => Vec::new(),
                    Some(k) => {
                        let model = &self.plan.segments(arm)[k];
                        let x0 = state.tool(arm).p;
                        let goal = self.goals[i][k];
                        let roll = rollout(model, x0, goal, model.params.gamma, cfg.dt)?;
                        let mut pts = roll.positions();
                        // the last rollout sample sits near, not on, the goal
                        pts.push(goal);
                        resample_arc(&pts, blend.v_max * cfg.dt)
                    }
                };
            }
            if self.reference[i].is_empty() {
                continue;
            }
            let (dp, k) = robot_increment(&self.reference[i], &state.tool(arm).p, self.progress[i], blend, cfg.dt)?;
            self.progress[i] = k;
            out[i] = dp;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_spacing() {
        let pts = vec![Vector3::zeros(), Vector3::new(0.01, 0.0, 0.0), Vector3::new(0.01, 0.0105, 0.0)];
        let r = resample_arc(&pts, 0.001);
        for w in r.windows(2).take(r.len() - 2) {
            assert!(((w[1] - w[0]).norm() - 0.001).abs() < 1e-9 || (w[1] - w[0]).norm() < 0.001);
        }
        assert_eq!(r[r.len() - 1], pts[2]);
        assert_eq!(r.len(), 22);
    }

    #[test]
    fn segments_split_at_waypoints() {
        let w = [Vector3::zeros(), Vector3::new(0.05, 0.0, 0.0), Vector3::new(0.05, 0.05, 0.0)];
        let mut pts = vec![w[0]; 20];
        pts.extend((1..=100).map(|k| Vector3::new(0.0005 * k as f64, 0.0, 0.0)));
        pts.extend(vec![w[1]; 20]);
        pts.extend((1..=100).map(|k| Vector3::new(0.05, 0.0005 * k as f64, 0.0)));
        let b = segment_bounds(&pts, &w).unwrap();
        assert_eq!(b.len(), 2);
        // leaves the first waypoint's 4 mm ball at x = 4 mm (sample 20 + 7)
        assert_eq!(b[0].0, 20 + 6);
        assert_eq!(pts[b[0].1], Vector3::new(0.0465, 0.0, 0.0));
        assert!((pts[b[1].0] - w[1]).norm() < WAYPOINT_RADIUS);
        assert!((pts[b[1].1] - w[2]).norm() < WAYPOINT_RADIUS);
    }

    #[test]
    fn perceived_sites_close_to_truth() {
        let cfg = SimConfig::default();
        for seed in 0..5 {
            let s = perceive_sites(&cfg, seed).unwrap();
            for (p, t) in s.iter().zip(&cfg.sites) {
                assert!((p - t).norm() < 0.0015, "seed {seed}: {p:?} vs {t:?}");
            }
        }
    }

    #[test]
    fn every_phase_maps_inside_the_plan() {
        for arm in Arm::BOTH {
            for ph in TaskPhase::ALL {
                if let Some(k) = segment_for(arm, ph) {
                    assert!(k < segment_count(arm));
                }
            }
        }
    }
}
