use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::error::Result;
use crate::shared_control::Command;
use crate::trajectory::{serde_wxyz, Arm};

/// Sub-steps of the bimanual peg-transfer protocol, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPhase {
    RApproach1,
    RGrasp,
    RToHandoff,
    Handoff,
    LTo2,
    LPlace2,
    LGrasp2,
    LTo3,
    LPlace3,
    RGrasp3,
    RTo1,
    RPlace1,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Transit,
    Grasp,
    Place,
    Handoff,
    Done,
}

impl TaskPhase {
    pub const ALL: [TaskPhase; 13] = [
        TaskPhase::RApproach1,
        TaskPhase::RGrasp,
        TaskPhase::RToHandoff,
        TaskPhase::Handoff,
        TaskPhase::LTo2,
        TaskPhase::LPlace2,
        TaskPhase::LGrasp2,
        TaskPhase::LTo3,
        TaskPhase::LPlace3,
        TaskPhase::RGrasp3,
        TaskPhase::RTo1,
        TaskPhase::RPlace1,
        TaskPhase::Done,
    ];

    pub fn kind(self) -> PhaseKind {
        use TaskPhase::*;
        match self {
            RApproach1 | RToHandoff | LTo2 | LTo3 | RTo1 => PhaseKind::Transit,
            RGrasp | LGrasp2 | RGrasp3 => PhaseKind::Grasp,
            LPlace2 | LPlace3 | RPlace1 => PhaseKind::Place,
            Handoff => PhaseKind::Handoff,
            Done => PhaseKind::Done,
        }
    }

    pub fn is_transit(self) -> bool {
        self.kind() == PhaseKind::Transit
    }

    /// The tool doing the phase's work; the left tool takes the peg during
    /// the handoff.
    pub fn active_arm(self) -> Option<Arm> {
        use TaskPhase::*;
        match self {
            RApproach1 | RGrasp | RToHandoff | RGrasp3 | RTo1 | RPlace1 => Some(Arm::Right),
            Handoff | LTo2 | LPlace2 | LGrasp2 | LTo3 | LPlace3 => Some(Arm::Left),
            Done => None,
        }
    }

    /// Board site the phase is heading for or working at, if any.
    pub fn site(self) -> Option<u8> {
        use TaskPhase::*;
        match self {
            RApproach1 | RGrasp | RTo1 | RPlace1 => Some(1),
            LTo2 | LPlace2 | LGrasp2 => Some(2),
            LTo3 | LPlace3 | RGrasp3 => Some(3),
            RToHandoff | Handoff | Done => None,
        }
    }

    pub fn next(self) -> TaskPhase {
        let i = Self::ALL.iter().position(|p| *p == self).unwrap();
        Self::ALL[(i + 1).min(Self::ALL.len() - 1)]
    }

    pub fn is_handoff(self) -> bool {
        matches!(self, TaskPhase::RToHandoff | TaskPhase::Handoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolState {
    pub p: Vector3<f64>,
    #[serde(with = "serde_wxyz")]
    pub q: UnitQuaternion<f64>,
    /// Closed jaws.
    pub grip: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PegState {
    pub p: Vector3<f64>,
    pub held_by: Option<Arm>,
    /// Seated at site 1, 2 or 3.
    pub site: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    /// Left then right.
    pub tools: [ToolState; 2],
    pub peg: PegState,
    pub phase: TaskPhase,
    pub clock: f64,
}

impl SimState {
    pub fn tool(&self, arm: Arm) -> &ToolState {
        &self.tools[arm.index()]
    }

    /// Where the phase's active tool is heading: the peg while grasping,
    /// the handoff point while meeting, the site otherwise.
    pub fn target(&self, cfg: &SimConfig) -> Option<Vector3<f64>> {
        match self.phase.kind() {
            PhaseKind::Done => None,
            PhaseKind::Grasp => Some(self.peg.p),
            PhaseKind::Handoff => Some(self.peg.p),
            _ if self.phase == TaskPhase::RApproach1 => Some(self.peg.p),
            _ if self.phase == TaskPhase::RToHandoff => Some(cfg.handoff),
            _ => self.phase.site().map(|s| cfg.site(s)),
        }
    }

    pub fn tip_distance(&self) -> f64 {
        (self.tools[0].p - self.tools[1].p).norm()
    }
}

/// Default orientation of a tool: shaft yaw about the board normal.
pub fn tool_orientation(cfg: &SimConfig, arm: Arm) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), cfg.tool_yaw[arm.index()])
}

/// Tools at home with open jaws, peg seated at site 1.
pub fn sim_init(cfg: &SimConfig) -> Result<SimState> {
    cfg.validate()?;
    let tool = |arm| ToolState { p: cfg.home_of(arm), q: tool_orientation(cfg, arm), grip: false };
    Ok(SimState {
        tools: [tool(Arm::Left), tool(Arm::Right)],
        peg: PegState { p: cfg.site(1), held_by: None, site: Some(1) },
        phase: TaskPhase::RApproach1,
        clock: 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SimEvent {
    Grasped { t: f64, arm: Arm },
    Seated { t: f64, arm: Arm, site: u8 },
    Dropped { t: f64, arm: Arm },
    Phase { t: f64, from: TaskPhase, to: TaskPhase },
    /// Masters re-engaged after re-centring; logged by the episode runner.
    Clutch { t: f64 },
}

fn phase_done(state: &SimState, cfg: &SimConfig) -> bool {
    use TaskPhase::*;
    let near = |arm: Arm, p: Vector3<f64>| (state.tool(arm).p - p).norm() < 3.0 * cfg.grasp_radius;
    match state.phase {
        RApproach1 => near(Arm::Right, state.peg.p),
        RGrasp | RGrasp3 => state.peg.held_by == Some(Arm::Right),
        RToHandoff => state.tip_distance() < cfg.grasp_radius,
        Handoff => state.peg.held_by == Some(Arm::Left) && !state.tool(Arm::Right).grip,
        LTo2 => near(Arm::Left, cfg.site(2)),
        LPlace2 => state.peg.site == Some(2),
        LGrasp2 => state.peg.held_by == Some(Arm::Left),
        LTo3 => near(Arm::Left, cfg.site(3)),
        LPlace3 => state.peg.site == Some(3),
        RTo1 => near(Arm::Right, cfg.site(1)),
        RPlace1 => state.peg.site == Some(1),
        Done => false,
    }
}

/// Kinematic update: move tools, resolve grip edges against the peg,
/// carry a held peg, advance the protocol, tick the clock.
pub fn sim_step(state: &SimState, cmds: &[Command; 2], cfg: &SimConfig) -> (SimState, Vec<SimEvent>) {
    let mut s = state.clone();
    let mut events = Vec::new();
    let t = state.clock + cfg.dt;
    for arm in Arm::BOTH {
        let i = arm.index();
        let cmd = &cmds[i];
        s.tools[i].p += cmd.dp;
        s.tools[i].q = cmd.q;
        let was = s.tools[i].grip;
        s.tools[i].grip = cmd.grip;
        if !was && cmd.grip {
            if s.peg.held_by != Some(arm) && (s.tools[i].p - s.peg.p).norm() <= cfg.grasp_radius {
                s.peg.held_by = Some(arm);
                s.peg.site = None;
                events.push(SimEvent::Grasped { t, arm });
            }
        } else if was && !cmd.grip && s.peg.held_by == Some(arm) {
            s.peg.held_by = None;
            let site = s.phase.site().filter(|n| (s.tools[i].p - cfg.site(*n)).norm() <= cfg.place_radius);
            match (s.phase.kind(), site) {
                (PhaseKind::Place, Some(n)) => {
                    s.peg.site = Some(n);
                    s.peg.p = cfg.site(n);
                    events.push(SimEvent::Seated { t, arm, site: n });
                }
                _ => {
                    s.peg.p = Vector3::new(s.tools[i].p.x, s.tools[i].p.y, cfg.plane_height());
                    events.push(SimEvent::Dropped { t, arm });
                }
            }
        }
    }
    if let Some(arm) = s.peg.held_by {
        s.peg.p = s.tools[arm.index()].p;
    }
    if phase_done(&s, cfg) {
        let to = s.phase.next();
        events.push(SimEvent::Phase { t, from: s.phase, to });
        s.phase = to;
    }
    s.clock = t;
    (s, events)
}

/// Frame-level context label: 1 = bimanual operation, 2 = local
/// operation, 0 = move to next target.
pub fn task_context(state: &SimState, cfg: &SimConfig) -> usize {
    if state.phase.is_handoff() && state.tip_distance() < 2.0 * cfg.grasp_radius {
        return 1;
    }
    if matches!(state.phase.kind(), PhaseKind::Grasp | PhaseKind::Place) {
        if let (Some(arm), Some(target)) = (state.phase.active_arm(), state.target(cfg)) {
            if (state.tool(arm).p - target).norm() < 3.0 * cfg.grasp_radius {
                return 2;
            }
        }
    }
    0
}
