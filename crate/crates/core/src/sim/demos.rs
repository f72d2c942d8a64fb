use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, EpisodeConfig, EpisodeLog, EpisodeMode, EpisodeModels, StepRecord};
use super::render::{render_styled, RenderStyle};
use super::state::{sim_init, task_context, SimState, ToolState};
use crate::context::{Image, LabeledImage};
use crate::error::{Error, Result};
use crate::trajectory::{serde_wxyz, Arm, ToolSample, Trajectory};

/// Pose of one tool in a demonstration record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoPose {
    pub p: Vector3<f64>,
    #[serde(with = "serde_wxyz")]
    pub q: UnitQuaternion<f64>,
    pub grip: bool,
}

impl From<&ToolState> for DemoPose {
    fn from(t: &ToolState) -> Self {
        Self { p: t.p, q: t.q, grip: t.grip }
    }
}

/// One line of a demonstration file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub t: f64,
    pub left: DemoPose,
    pub right: DemoPose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub seed: u64,
    pub records: Vec<DemoRecord>,
}

impl Demo {
    pub fn from_log(log: &EpisodeLog, start: &SimState) -> Self {
        let rec = |t: f64, tools: &[ToolState; 2]| DemoRecord { t, left: (&tools[0]).into(), right: (&tools[1]).into() };
        let mut records = vec![rec(start.clock, &start.tools)];
        records.extend(log.steps.iter().map(|s| rec(s.clock, &s.tools)));
        Self { seed: log.seed, records }
    }

    pub fn trajectory(&self, arm: Arm) -> Result<Trajectory> {
        let samples = self
            .records
            .iter()
            .map(|r| {
                let pose = if arm == Arm::Left { &r.left } else { &r.right };
                ToolSample::new(r.t, pose.p, pose.q, pose.grip)
            })
            .collect();
        Trajectory::new(arm, samples)
    }
}

/// Which steps become labeled frames: every `strides[c]`-th step of each
/// context `c`, rendered in `style`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSampling {
    pub strides: [usize; 3],
    pub style: RenderStyle,
}

impl Default for FrameSampling {
    fn default() -> Self {
        Self { strides: [40, 3, 12], style: RenderStyle::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub trial: usize,
    pub step: usize,
    pub label: usize,
    pub image: Image,
}

impl From<&LabeledFrame> for LabeledImage {
    fn from(f: &LabeledFrame) -> Self {
        LabeledImage { image: f.image.clone(), label: f.label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demo>,
    pub frames: Vec<LabeledFrame>,
}

impl DemoSet {
    pub fn label_histogram(&self) -> [usize; 3] {
        let mut h = [0; 3];
        for f in &self.frames {
            h[f.label] += 1;
        }
        h
    }

    pub fn labeled_images(&self) -> Vec<LabeledImage> {
        self.frames.iter().map(Into::into).collect()
    }
}

/// Seed of trial `i` in a batch seeded with `seed`.
pub fn trial_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64)
}

/// Simulator state after a logged step.
pub fn state_of(step: &StepRecord) -> SimState {
    SimState { tools: step.tools, peg: step.peg, phase: step.phase, clock: step.clock }
}

/// Runs `n` manual scripted trials and keeps their tool motion as
/// demonstrations plus oracle-labeled frames.
pub fn generate_demos(n: usize, cfg: &EpisodeConfig, seed: u64, sampling: &FrameSampling) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::InsufficientData("need at least one trial".into()));
    }
    if sampling.strides.contains(&0) {
        return Err(Error::InvalidConfig("frame strides must be ≥ 1".into()));
    }
    let start = sim_init(&cfg.sim)?;
    let mut demos = Vec::with_capacity(n);
    let mut frames = Vec::new();
    for trial in 0..n {
        let log = run_episode(EpisodeMode::Manual, EpisodeModels::default(), cfg, trial_seed(seed, trial))?;
        if !log.success {
            return Err(Error::InsufficientData(format!("demonstration trial {trial} timed out")));
        }
        let mut seen = [0usize; 3];
        for (k, step) in log.steps.iter().enumerate() {
            let state = state_of(step);
            let label = task_context(&state, &cfg.sim);
            if seen[label] % sampling.strides[label] == 0 {
                frames.push(LabeledFrame { trial, step: k, label, image: render_styled(&state, &cfg.sim, &sampling.style) });
            }
            seen[label] += 1;
        }
        demos.push(Demo::from_log(&log, &start));
    }
    Ok(DemoSet { demos, frames })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trial_is_reproducible_and_covers_all_contexts() {
        let cfg = EpisodeConfig::default();
        let a = generate_demos(1, &cfg, 11, &FrameSampling::default()).unwrap();
        let b = generate_demos(1, &cfg, 11, &FrameSampling::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.label_histogram().iter().all(|&c| c > 0), "{:?}", a.label_histogram());
        let tr = a.demos[0].trajectory(Arm::Right).unwrap();
        assert_eq!(tr.len(), a.demos[0].records.len());
    }
}
