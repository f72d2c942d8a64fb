use std::collections::VecDeque;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{HumanAgentConfig, SimConfig};
use super::state::{PhaseKind, SimState, TaskPhase};
use crate::error::{Error, Result};
use crate::trajectory::Arm;

/// What the operator does on one control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HumanOutput {
    /// Master increments, left then right (slave intent / τ).
    pub dph: [Vector3<f64>; 2],
    pub grip: [bool; 2],
    pub engaged: bool,
    /// Master positions after this step.
    pub masters: [Vector3<f64>; 2],
    /// Set on the step the masters re-engage after a clutch.
    pub clutch_event: bool,
}

/// Where an arm's operator is steering, given what they currently see.
pub fn subtarget(state: &SimState, cfg: &SimConfig, arm: Arm) -> Vector3<f64> {
    use TaskPhase::*;
    let peg = state.peg.p;
    let free = state.peg.held_by.is_none() && state.peg.site.is_none();
    let home = cfg.home_of(arm);
    // a dropped peg is picked up again before anything else
    let site_or_peg = |n: u8| if free { peg } else { cfg.site(n) };
    match (arm, state.phase) {
        (Arm::Right, RApproach1 | RGrasp | RGrasp3) => peg,
        (Arm::Right, RToHandoff | Handoff) => cfg.handoff,
        (Arm::Right, RTo1 | RPlace1) => site_or_peg(1),
        (Arm::Right, _) => home,
        (Arm::Left, RToHandoff) => cfg.handoff,
        (Arm::Left, Handoff | LGrasp2) => peg,
        (Arm::Left, LTo2 | LPlace2) => site_or_peg(2),
        (Arm::Left, LTo3 | LPlace3) => site_or_peg(3),
        (Arm::Left, _) => home,
    }
}

/// Desired jaw state for an arm; `None` keeps the current one.
fn grip_intent(state: &SimState, cfg: &SimConfig, arm: Arm) -> Option<bool> {
    let tool = state.tool(arm);
    let holding = state.peg.held_by == Some(arm);
    let d = (tool.p - state.peg.p).norm();
    let active = state.phase.active_arm() == Some(arm);
    let free = state.peg.held_by.is_none() && state.peg.site.is_none();
    // jaws seen closed on nothing reopen for another try
    let take = holding || (!tool.grip && d < 0.5 * cfg.grasp_radius);
    match state.phase.kind() {
        PhaseKind::Grasp if active => Some(take),
        PhaseKind::Handoff => match arm {
            Arm::Left => Some(take),
            Arm::Right => Some(state.peg.held_by != Some(Arm::Left)),
        },
        PhaseKind::Place if active => {
            if free {
                Some(take)
            } else {
                let site = cfg.site(state.phase.site().expect("place phases have a site"));
                Some(!(holding && (tool.p - site).norm() < 0.5 * cfg.place_radius))
            }
        }
        PhaseKind::Transit if active => Some(holding || (free && take)),
        // idle hands hold nothing
        _ if !holding => Some(false),
        _ => None,
    }
}

/// Proportional operator with delayed observation, intent noise and a
/// bounded master workspace that forces clutching.
#[derive(Debug, Clone)]
pub struct ScriptedHuman {
    cfg: HumanAgentConfig,
    tau: f64,
    rng: ChaCha8Rng,
    seen: VecDeque<SimState>,
    masters: [Vector3<f64>; 2],
    /// Remaining seconds of an ongoing clutch.
    clutch_left: f64,
    grip: [bool; 2],
    /// Steps before the next jaw change is considered.
    grip_wait: [usize; 2],
}

impl ScriptedHuman {
    pub fn new(cfg: &HumanAgentConfig, tau: f64, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if !(tau > 0.0) {
            return Err(Error::InvalidConfig(format!("τ = {tau}")));
        }
        Ok(Self {
            cfg: cfg.clone(),
            tau,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ seed.wrapping_mul(0xA076_1D64_78BD_642F)),
            seen: VecDeque::new(),
            masters: [Vector3::zeros(); 2],
            clutch_left: 0.0,
            grip: [false; 2],
            grip_wait: [0; 2],
        })
    }

    pub fn masters(&self) -> [Vector3<f64>; 2] {
        self.masters
    }

    /// One control step. `alpha` is the human share of the blend in force
    /// this step; the masters only travel that share of the intent.
    pub fn act(&mut self, state: &SimState, cfg: &SimConfig, alpha: f64) -> HumanOutput {
        self.seen.push_back(state.clone());
        while self.seen.len() > self.cfg.reaction_delay + 1 {
            self.seen.pop_front();
        }
        let obs = self.seen.front().expect("just pushed").clone();
        let normal = Normal::new(0.0, self.cfg.noise).expect("finite σ");
        // draw every step so the stream does not depend on the branch taken
        let noise: [Vector3<f64>; 2] = [0, 1].map(|_| Vector3::from_fn(|_, _| normal.sample(&mut self.rng)));

        for arm in Arm::BOTH {
            let i = arm.index();
            if self.grip_wait[i] > 0 {
                self.grip_wait[i] -= 1;
            } else if let Some(g) = grip_intent(&obs, cfg, arm) {
                if g != self.grip[i] {
                    self.grip[i] = g;
                    self.grip_wait[i] = self.cfg.reaction_delay + 1;
                }
            }
        }

        if self.clutch_left > 0.0 {
            self.clutch_left -= cfg.dt;
            if self.clutch_left > 1e-12 {
                return HumanOutput { dph: [Vector3::zeros(); 2], grip: self.grip, engaged: false, masters: self.masters, clutch_event: false };
            }
            self.clutch_left = 0.0;
            self.masters = [Vector3::zeros(); 2];
            return HumanOutput { dph: [Vector3::zeros(); 2], grip: self.grip, engaged: true, masters: self.masters, clutch_event: true };
        }

        let mut dph = [Vector3::zeros(); 2];
        if state.phase != TaskPhase::Done {
            for arm in Arm::BOTH {
                let i = arm.index();
                let err = subtarget(&obs, cfg, arm) - obs.tool(arm).p;
                dph[i] = (err * (self.cfg.gain * cfg.dt) + noise[i]) / self.tau;
            }
        }
        let mut out_of_reach = false;
        for i in 0..2 {
            self.masters[i] += dph[i] * alpha;
            out_of_reach |= self.masters[i].amax() > self.cfg.workspace;
        }
        if out_of_reach {
            self.clutch_left = self.cfg.clutch_time;
            if self.clutch_left <= 0.0 {
                self.masters = [Vector3::zeros(); 2];
            }
        }
        HumanOutput { dph, grip: self.grip, engaged: true, masters: self.masters, clutch_event: false }
    }
}
