use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sharedctl::context::{ClassifierArch, TrainConfig};
use sharedctl::dmp::DmpParams;
use sharedctl::gpr::DesiredFitConfig;
use sharedctl::registration::IcpConfig;
use sharedctl::shared_control::BlendConfig;
use sharedctl::sim::{EpisodeConfig, FrameSampling, HumanAgentConfig, RenderStyle, SimConfig};

use crate::error::{CliError, CliResult};

/// Artifact directories; relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub results_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { data_dir: "data".into(), model_dir: "models".into(), results_dir: "results".into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmpOverrides {
    pub alpha_z: f64,
    pub beta_z: f64,
    pub alpha_x: f64,
    pub kernels: usize,
}

impl Default for DmpOverrides {
    fn default() -> Self {
        Self { alpha_z: 25.0, beta_z: 6.25, alpha_x: 8.0, kernels: 50 }
    }
}

impl DmpOverrides {
    /// γ is set per segment when fitting.
    pub fn params(&self) -> sharedctl::Result<DmpParams> {
        DmpParams::new(self.alpha_z, self.beta_z, self.alpha_x, 1.0, self.kernels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfig {
    /// Keep every n-th demonstration sample before registration.
    pub decimate: usize,
    pub icp: IcpConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self { decimate: 10, icp: IcpConfig::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub demo: u64,
    /// Demonstrations rendered by the perturbed camera for fine-tuning.
    pub finetune_demo: u64,
    pub episode: u64,
    /// Live sessions.
    pub session: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { demo: 7, finetune_demo: 8, episode: 1000, session: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub sim: SimConfig,
    pub agent: HumanAgentConfig,
    pub blend: BlendConfig,
    pub registration: RegistrationConfig,
    pub desired: DesiredFitConfig,
    pub dmp: DmpOverrides,
    pub classifier: ClassifierArch,
    pub frames: FrameSampling,
    pub finetune_frames: FrameSampling,
    pub train: TrainConfig,
    pub finetune: TrainConfig,
    /// Leading layers kept fixed while fine-tuning.
    pub freeze: usize,
    pub seeds: Seeds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            sim: SimConfig::default(),
            agent: HumanAgentConfig::default(),
            blend: BlendConfig::default(),
            registration: RegistrationConfig::default(),
            desired: DesiredFitConfig::default(),
            dmp: DmpOverrides::default(),
            classifier: ClassifierArch::desk(),
            frames: FrameSampling { strides: [100, 6, 30], style: RenderStyle::default() },
            finetune_frames: FrameSampling { strides: [150, 9, 45], style: RenderStyle::perturbed(8) },
            train: TrainConfig { lr: 1e-3, max_epochs: 40, ..TrainConfig::default() },
            finetune: TrainConfig { lr: 5e-4, max_epochs: 30, ..TrainConfig::default() },
            freeze: 2,
            seeds: Seeds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> CliResult<()> {
        self.sim.validate()?;
        self.agent.validate()?;
        self.blend.validate()?;
        self.train.validate()?;
        self.finetune.validate()?;
        self.classifier.validate()?;
        self.dmp.params()?;
        if self.registration.decimate == 0 {
            return Err(CliError::Data("registration.decimate must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn episode(&self) -> EpisodeConfig {
        EpisodeConfig { sim: self.sim.clone(), agent: self.agent.clone(), blend: self.blend }
    }

    /// Reads and validates a config file; relative paths become relative
    /// to the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("malformed config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.paths.data_dir, &mut cfg.paths.model_dir, &mut cfg.paths.results_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
