//! Kinematic peg-transfer environment: protocol state machine, scene
//! rendering, scripted operator, episode runner and metrics.

mod config;
mod demos;
mod episode;
mod human;
mod plan;
mod render;
mod state;

pub use config::{HumanAgentConfig, SimConfig};
pub use state::{sim_init, sim_step, task_context, tool_orientation, PegState, PhaseKind, SimEvent, SimState, TaskPhase, ToolState};
pub use human::{subtarget, HumanOutput, ScriptedHuman};
pub use render::{render_observation, render_styled, RenderStyle};
pub use episode::{compute_metrics, run_episode, EpisodeConfig, EpisodeLog, EpisodeMode, EpisodeModels, EpisodeRunner, Metrics, StepRecord};
pub use plan::{perceive_sites, plan_from_desired, resample_arc, segment_bounds, segment_for, segment_goals, RobotPlan, RobotTracker};
pub use demos::{generate_demos, state_of, trial_seed, Demo, DemoPose, DemoRecord, DemoSet, FrameSampling, LabeledFrame};
