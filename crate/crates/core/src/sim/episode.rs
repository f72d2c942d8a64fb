use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::config::{HumanAgentConfig, SimConfig};
use super::human::{HumanOutput, ScriptedHuman};
use super::plan::{perceive_sites, RobotPlan, RobotTracker};
use super::render::render_observation;
use super::state::{sim_init, sim_step, task_context, tool_orientation, PegState, SimEvent, SimState, TaskPhase, ToolState};
use crate::context::{predict_context, Classifier, ContextProbs};
use crate::error::{Error, Result};
use crate::shared_control::{compose_command, compute_alpha, mode_of, BlendConfig, Command, ControlMode, RoleState};
use crate::trajectory::Arm;

/// How authority is assigned for a whole episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeMode {
    Manual,
    #[serde(rename = "auto")]
    Autonomous,
    Shared,
}

impl std::str::FromStr for EpisodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manual" => Ok(Self::Manual),
            "auto" | "autonomous" => Ok(Self::Autonomous),
            "shared" => Ok(Self::Shared),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

/// One control step, recorded after the simulator advanced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub clock: f64,
    pub masters: [Vector3<f64>; 2],
    pub engaged: bool,
    /// Human increments, master units.
    pub dph: [Vector3<f64>; 2],
    /// Robot increments, master units.
    pub dpr: [Vector3<f64>; 2],
    /// Applied slave increments.
    pub dps: [Vector3<f64>; 2],
    pub alpha: f64,
    pub probs: Option<ContextProbs>,
    pub context: Option<usize>,
    /// Oracle label of the frame that was classified.
    pub oracle: usize,
    pub mode: ControlMode,
    pub tools: [ToolState; 2],
    pub peg: PegState,
    pub phase: TaskPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub mode: EpisodeMode,
    pub success: bool,
    pub steps: Vec<StepRecord>,
    pub events: Vec<SimEvent>,
}

/// Evaluation metrics of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Master path length, m.
    #[serde(rename = "M")]
    pub m: f64,
    /// Completion time, s.
    #[serde(rename = "T")]
    pub t: f64,
    /// Mean tool speed, mm/s.
    #[serde(rename = "A")]
    pub a: f64,
    /// Clutch count.
    #[serde(rename = "C")]
    pub c: usize,
    pub success: bool,
}

/// Models an episode may need; shared mode needs both, autonomous the plan.
#[derive(Debug, Clone, Copy, Default)]
pub struct EpisodeModels<'a> {
    pub plan: Option<&'a RobotPlan>,
    pub classifier: Option<&'a Classifier>,
}

/// Everything that parameterizes an episode besides the seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub sim: SimConfig,
    pub agent: HumanAgentConfig,
    pub blend: BlendConfig,
}

/// Authority weight per mode, and the role state it leaves behind.
fn mode_alpha(
    mode: EpisodeMode,
    state: &SimState,
    probs: Option<&ContextProbs>,
    role: RoleState,
    lambda: f64,
) -> (f64, RoleState) {
    match (mode, probs) {
        (EpisodeMode::Shared, Some(p)) => compute_alpha(p, role, lambda),
        (EpisodeMode::Autonomous, _) if state.phase.is_transit() => (0.0, role),
        _ => (1.0, role),
    }
}

/// Fixed-step episode loop with the operator supplied per step: render →
/// classify → α → operator → robot increment → blend → simulate → log.
#[derive(Debug)]
pub struct EpisodeRunner<'a> {
    mode: EpisodeMode,
    classifier: Option<&'a Classifier>,
    cfg: EpisodeConfig,
    state: SimState,
    tracker: Option<RobotTracker>,
    role: RoleState,
    q: [UnitQuaternion<f64>; 2],
    max_steps: usize,
    log: EpisodeLog,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(mode: EpisodeMode, models: EpisodeModels<'a>, cfg: &EpisodeConfig, seed: u64) -> Result<Self> {
        cfg.blend.validate()?;
        let sim = &cfg.sim;
        let needs_plan = mode != EpisodeMode::Manual;
        if needs_plan && models.plan.is_none() {
            return Err(Error::MissingModel("robot plan".into()));
        }
        if mode == EpisodeMode::Shared && models.classifier.is_none() {
            return Err(Error::MissingModel("context classifier".into()));
        }
        let state = sim_init(sim)?;
        let tracker = match models.plan {
            Some(plan) if needs_plan => Some(RobotTracker::new(plan, sim, &perceive_sites(sim, seed)?)?),
            _ => None,
        };
        Ok(Self {
            mode,
            classifier: if mode == EpisodeMode::Shared { models.classifier } else { None },
            cfg: cfg.clone(),
            state,
            tracker,
            role: RoleState::default(),
            q: [tool_orientation(sim, Arm::Left), tool_orientation(sim, Arm::Right)],
            max_steps: (sim.timeout / sim.dt).round() as usize,
            log: EpisodeLog { seed, mode, success: false, steps: Vec::new(), events: Vec::new() },
        })
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn mode(&self) -> EpisodeMode {
        self.mode
    }

    pub fn config(&self) -> &EpisodeConfig {
        &self.cfg
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    /// Done, or out of time.
    pub fn finished(&self) -> bool {
        self.log.success || self.log.steps.len() >= self.max_steps
    }

    /// Default tool orientation of each arm.
    pub fn orientations(&self) -> [UnitQuaternion<f64>; 2] {
        self.q
    }

    /// Advances one step; `operator` sees the current state and the α in
    /// force and returns the human side of the command.
    pub fn step(&mut self, operator: impl FnOnce(&SimState, f64) -> HumanOutput) -> Result<&StepRecord> {
        if self.finished() {
            return Err(Error::OutOfRange("episode already finished".into()));
        }
        let sim = &self.cfg.sim;
        let oracle = task_context(&self.state, sim);
        let probs = match self.classifier {
            Some(clf) => Some(predict_context(clf, &render_observation(&self.state, sim))?.1),
            None => None,
        };
        let (alpha, role) = mode_alpha(self.mode, &self.state, probs.as_ref(), self.role, self.cfg.blend.lambda);
        self.role = role;
        let h = operator(&self.state, alpha);
        let dpr = match self.tracker.as_mut() {
            Some(t) => t.increment(&self.state, sim, &self.cfg.blend)?,
            None => [Vector3::zeros(); 2],
        };
        let cmds = [0, 1].map(|i| {
            let human = Command { dp: if h.engaged { h.dph[i] } else { Vector3::zeros() }, q: self.q[i], grip: h.grip[i] };
            compose_command(&human, &dpr[i], alpha, &self.cfg.blend, sim.dt)
        });
        let (next, events) = sim_step(&self.state, &cmds, sim);
        self.state = next;
        if h.clutch_event {
            self.log.events.push(SimEvent::Clutch { t: self.state.clock });
        }
        self.log.events.extend(events);
        self.log.steps.push(StepRecord {
            clock: self.state.clock,
            masters: h.masters,
            engaged: h.engaged,
            dph: h.dph,
            dpr,
            dps: [cmds[0].dp, cmds[1].dp],
            alpha,
            context: probs.as_ref().map(|p| p.argmax()),
            probs,
            oracle,
            mode: mode_of(alpha)?,
            tools: self.state.tools,
            peg: self.state.peg,
            phase: self.state.phase,
        });
        self.log.success = self.state.phase == TaskPhase::Done;
        Ok(self.log.steps.last().expect("just pushed"))
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }
}

/// Steps one scripted episode to completion or timeout.
pub fn run_episode(mode: EpisodeMode, models: EpisodeModels, cfg: &EpisodeConfig, seed: u64) -> Result<EpisodeLog> {
    let mut runner = EpisodeRunner::new(mode, models, cfg, seed)?;
    let mut human = ScriptedHuman::new(&cfg.agent, cfg.blend.tau, seed)?;
    while !runner.finished() {
        runner.step(|state, alpha| human.act(state, &cfg.sim, alpha))?;
    }
    Ok(runner.into_log())
}

/// M, T, A, C from a log; recomputing from a persisted log gives the same
/// values.
pub fn compute_metrics(log: &EpisodeLog) -> Result<Metrics> {
    let last = log.steps.last().ok_or(Error::Empty("episode log"))?;
    let mut m = 0.0;
    let mut travel = 0.0;
    let mut c = 0;
    let mut engaged = true;
    for s in &log.steps {
        if s.engaged {
            m += s.alpha * (s.dph[0].norm() + s.dph[1].norm());
        }
        travel += s.dps[0].norm() + s.dps[1].norm();
        c += (!engaged && s.engaged) as usize;
        engaged = s.engaged;
    }
    let t = last.clock;
    let a = if t > 0.0 { 1000.0 * travel / t } else { 0.0 };
    Ok(Metrics { m, t, a, c, success: log.success })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shared_control::ControlMode;

    fn still_step(clock: f64, engaged: bool) -> StepRecord {
        let cfg = SimConfig::default();
        let s = sim_init(&cfg).unwrap();
        StepRecord {
            clock,
            masters: [Vector3::zeros(); 2],
            engaged,
            dph: [Vector3::zeros(); 2],
            dpr: [Vector3::zeros(); 2],
            dps: [Vector3::zeros(); 2],
            alpha: 1.0,
            probs: None,
            context: None,
            oracle: 0,
            mode: ControlMode::Manual,
            tools: s.tools,
            peg: s.peg,
            phase: s.phase,
        }
    }

    fn log_of(steps: Vec<StepRecord>) -> EpisodeLog {
        EpisodeLog { seed: 0, mode: EpisodeMode::Manual, success: false, steps, events: Vec::new() }
    }

    #[test]
    fn stationary_log_metrics() {
        let steps = (1..=1000).map(|k| still_step(k as f64 * 0.01, true)).collect();
        let m = compute_metrics(&log_of(steps)).unwrap();
        assert_eq!((m.m, m.a, m.c), (0.0, 0.0, 0));
        assert!((m.t - 10.0).abs() < 1e-9);
    }

    #[test]
    fn master_path_sum() {
        let steps = (1..=100)
            .map(|k| {
                let mut s = still_step(k as f64 * 0.01, true);
                s.dph[0] = Vector3::new(0.001, 0.0, 0.0);
                s
            })
            .collect();
        let m = compute_metrics(&log_of(steps)).unwrap();
        assert!((m.m - 0.1).abs() < 1e-12);
    }

    #[test]
    fn one_clutch_cycle() {
        let steps = (1..=10).map(|k| still_step(k as f64, !(4..7).contains(&k))).collect();
        assert_eq!(compute_metrics(&log_of(steps)).unwrap().c, 1);
        assert!(compute_metrics(&log_of(Vec::new())).is_err());
    }

    #[test]
    fn manual_episode_completes_deterministically() {
        let cfg = EpisodeConfig::default();
        let a = run_episode(EpisodeMode::Manual, EpisodeModels::default(), &cfg, 0).unwrap();
        assert!(a.success, "phase {:?} at {}", a.steps.last().unwrap().phase, a.steps.last().unwrap().clock);
        let b = run_episode(EpisodeMode::Manual, EpisodeModels::default(), &cfg, 0).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for w in a.steps.windows(2) {
            assert!(w[1].clock > w[0].clock);
        }
    }

    #[test]
    fn missing_models_rejected() {
        let cfg = EpisodeConfig::default();
        assert!(matches!(
            run_episode(EpisodeMode::Shared, EpisodeModels::default(), &cfg, 0),
            Err(Error::MissingModel(_))
        ));
        assert!(run_episode(EpisodeMode::Autonomous, EpisodeModels::default(), &cfg, 0).is_err());
    }
}
