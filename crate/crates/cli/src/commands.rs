use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sharedctl::context::{evaluate, finetune, load_classifier, save_classifier, train, Classifier, LabeledImage};
use sharedctl::gpr::{fit_desired_trajectory, DesiredTrajectory};
use sharedctl::registration::{register_demos, RegisteredDemoSet};
use sharedctl::sim::{
    compute_metrics, generate_demos, plan_from_desired, run_episode, Demo, EpisodeMode, EpisodeModels, FrameSampling,
    RobotPlan,
};
use sharedctl::stats::{stats_compare, Comparison};
use sharedctl::Arm;

use crate::config::PipelineConfig;
use crate::error::{CliError, CliResult};
use crate::formats::*;

pub const REGISTERED: &str = "registered.json";
pub const DESIRED: &str = "desired.json";
pub const PLAN: &str = "plan.json";
pub const CLASSIFIER: &str = "classifier.sccl";
pub const FINETUNED: &str = "classifier_finetuned.sccl";

#[derive(Debug, Parser)]
#[command(name = "sharedctl", version, about = "Trajectory learning and context-aware shared control pipeline")]
pub struct Cli {
    /// Pipeline config (JSON); built-in defaults when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Style {
    Nominal,
    Perturbed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Manual,
    Auto,
    Shared,
}

impl From<ModeArg> for EpisodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Manual => EpisodeMode::Manual,
            ModeArg::Auto => EpisodeMode::Autonomous,
            ModeArg::Shared => EpisodeMode::Shared,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Write the full default config.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Scripted manual trials → demonstration files and labeled frames.
    DemoGen {
        #[arg(long, default_value_t = 36)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Style::Nominal)]
        style: Style,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// ICP + DTW registration of every demonstration, per arm.
    Register {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Desired trajectory by Gaussian process regression.
    GprFit {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-segment movement primitives from the desired trajectory.
    DmpFit {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the context classifier on labeled frames.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a classifier on a new domain with leading layers frozen.
    Finetune {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        freeze: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run scripted episodes; writes logs and a metrics file.
    Episode {
        #[arg(long, value_enum, default_value_t = ModeArg::Manual)]
        mode: ModeArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        n: usize,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from an episode log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of two metrics files.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Live session bridge over websocket.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, value_enum, default_value_t = ModeArg::Shared)]
        mode: ModeArg,
        #[arg(long, default_value_t = 50.0)]
        tick_hz: f64,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        classifier: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn print_json<T: Serialize>(v: &T) -> CliResult<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Cmd::InitConfig { out } = &cli.cmd {
        let cfg = PipelineConfig::default();
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(out, cfg.to_json() + "\n")?;
        return Ok(());
    }
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let c = PipelineConfig::default();
            c.validate()?;
            c
        }
    };
    let paths = &cfg.paths;
    let model = |name: &str| paths.model_dir.join(name);
    match cli.cmd {
        Cmd::InitConfig { .. } => unreachable!(),
        Cmd::DemoGen { n, seed, style, out } => {
            let (sampling, default_seed, default_dir) = match style {
                Style::Nominal => (cfg.frames.clone(), cfg.seeds.demo, paths.data_dir.clone()),
                Style::Perturbed => (cfg.finetune_frames.clone(), cfg.seeds.finetune_demo, paths.data_dir.join("perturbed")),
            };
            let dir = out.unwrap_or(default_dir);
            let summary = demo_gen(&cfg, n, seed.unwrap_or(default_seed), &sampling, &dir)?;
            print_json(&summary)
        }
        Cmd::Register { data, out } => {
            let sets = register(&cfg, &data.unwrap_or_else(|| paths.data_dir.clone()))?;
            let out = out.unwrap_or_else(|| model(REGISTERED));
            write_model(&out, "registered_demo_sets", &sets)?;
            let refs: BTreeMap<String, usize> =
                sets.iter().map(|s| (format!("{:?}", s.arm).to_lowercase(), s.reference_index)).collect();
            print_json(&serde_json::json!({ "out": out, "reference_index": refs }))
        }
        Cmd::GprFit { input, out } => {
            let sets: Vec<RegisteredDemoSet> =
                read_model(&input.unwrap_or_else(|| model(REGISTERED)), "registered_demo_sets")?;
            let desired = fit_desired_trajectory(&sets, &cfg.desired)?;
            let out = out.unwrap_or_else(|| model(DESIRED));
            write_model(&out, "desired_trajectory", &desired)?;
            let hypers: Vec<_> = desired.arms.iter().map(|a| (a.arm, a.hyper)).collect();
            print_json(&serde_json::json!({ "out": out, "duration": desired.duration, "hyper": hypers }))
        }
        Cmd::DmpFit { input, out } => {
            let desired: DesiredTrajectory =
                read_model(&input.unwrap_or_else(|| model(DESIRED)), "desired_trajectory")?;
            let plan = plan_from_desired(&desired, &cfg.sim, &cfg.dmp.params()?)?;
            let out = out.unwrap_or_else(|| model(PLAN));
            write_model(&out, "robot_plan", &plan)?;
            let gammas: Vec<Vec<f64>> =
                Arm::BOTH.iter().map(|a| plan.segments(*a).iter().map(|m| m.params.gamma).collect()).collect();
            print_json(&serde_json::json!({ "out": out, "segment_durations": gammas }))
        }
        Cmd::Train { data, seed, out } => {
            let data = load_frames(&data.unwrap_or_else(|| paths.data_dir.clone()))?;
            let mut tc = cfg.train.clone();
            if let Some(s) = seed {
                tc.seed = s;
            }
            let init = Classifier::new(cfg.classifier.clone(), tc.seed)?;
            let (clf, report) = train(&init, &data, &tc)?;
            let out = out.unwrap_or_else(|| model(CLASSIFIER));
            save_to(&clf, &out)?;
            let held_out = evaluate(&clf, &data, &report.val_indices)?;
            let summary = serde_json::json!({ "out": out, "frames": data.len(), "held_out_accuracy": held_out.1, "report": report });
            write_json(&paths.results_dir.join("train_report.json"), &summary)?;
            print_json(&summary)
        }
        Cmd::Finetune { input, data, freeze, seed, out } => {
            let clf = load_classifier(&input.unwrap_or_else(|| model(CLASSIFIER)))?;
            let data = load_frames(&data.unwrap_or_else(|| paths.data_dir.join("perturbed")))?;
            let mut tc = cfg.finetune.clone();
            if let Some(s) = seed {
                tc.seed = s;
            }
            let (tuned, report) = finetune(&clf, &data, freeze.unwrap_or(cfg.freeze), &tc)?;
            let out = out.unwrap_or_else(|| model(FINETUNED));
            save_to(&tuned, &out)?;
            let before = evaluate(&clf, &data, &report.val_indices)?;
            let after = evaluate(&tuned, &data, &report.val_indices)?;
            let summary = serde_json::json!({
                "out": out,
                "frames": data.len(),
                "held_out_accuracy_before": before.1,
                "held_out_accuracy": after.1,
                "report": report,
            });
            write_json(&paths.results_dir.join("finetune_report.json"), &summary)?;
            print_json(&summary)
        }
        Cmd::Episode { mode, seed, n, plan, classifier, out } => {
            let mode = EpisodeMode::from(mode);
            let plan = load_plan_for(mode, plan.unwrap_or_else(|| model(PLAN)))?;
            let clf = load_classifier_for(mode, classifier.unwrap_or_else(|| model(CLASSIFIER)))?;
            let dir = out.unwrap_or_else(|| paths.results_dir.clone());
            let first = seed.unwrap_or(cfg.seeds.episode);
            let file = episodes(&cfg, mode, first, n, EpisodeModels { plan: plan.as_ref(), classifier: clf.as_ref() }, &dir)?;
            print_json(&file)
        }
        Cmd::Metrics { log, out } => {
            let m = compute_metrics(&read_log(&log)?)?;
            if let Some(out) = out {
                write_json(&out, &m)?;
            }
            print_json(&m)
        }
        Cmd::Compare { a, b, out } => {
            let report = compare(&read_metrics(&a)?, &read_metrics(&b)?)?;
            if let Some(out) = out {
                write_json(&out, &report)?;
            }
            print_json(&report)
        }
        Cmd::Serve { port, mode, tick_hz, plan, classifier, seed } => {
            let mode = EpisodeMode::from(mode);
            let plan = load_plan_for(mode, plan.unwrap_or_else(|| model(PLAN)))?;
            let clf = load_classifier_for(mode, classifier.unwrap_or_else(|| model(CLASSIFIER)))?;
            let opts = crate::serve::ServeOptions {
                port,
                mode,
                tick_hz,
                seed: seed.unwrap_or(cfg.seeds.session),
                log_dir: paths.results_dir.join("sessions"),
            };
            crate::serve::serve_blocking(cfg.episode(), plan, clf, opts)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn save_to(clf: &Classifier, path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(save_classifier(clf, path)?)
}

fn load_plan_for(mode: EpisodeMode, path: PathBuf) -> CliResult<Option<RobotPlan>> {
    if mode == EpisodeMode::Manual {
        return Ok(None);
    }
    read_model(&path, "robot_plan").map(Some)
}

fn load_classifier_for(mode: EpisodeMode, path: PathBuf) -> CliResult<Option<Classifier>> {
    if mode != EpisodeMode::Shared {
        return Ok(None);
    }
    load_classifier(&path).map(Some).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct DemoGenSummary {
    pub dir: PathBuf,
    pub trials: usize,
    pub frames: usize,
    pub label_histogram: [usize; 3],
}

pub fn demo_gen(cfg: &PipelineConfig, n: usize, seed: u64, sampling: &FrameSampling, dir: &Path) -> CliResult<DemoGenSummary> {
    let set = generate_demos(n, &cfg.episode(), seed, sampling)?;
    std::fs::create_dir_all(dir)?;
    for (trial, demo) in set.demos.iter().enumerate() {
        let path = dir.join(format!("{}.jsonl", trial_stem(trial)));
        write_demo(&path, &demo.records)?;
        let (frames_path, labels_path) = companions(&path);
        let mine: Vec<_> = set.frames.iter().filter(|f| f.trial == trial).collect();
        let images: Vec<_> = mine.iter().map(|f| f.image.clone()).collect();
        write_image_block(&frames_path, &images)?;
        let labels = mine.iter().enumerate().map(|(index, f)| LabelRecord { index, step: f.step, label: f.label });
        write_jsonl(&labels_path, labels)?;
    }
    Ok(DemoGenSummary { dir: dir.to_path_buf(), trials: n, frames: set.frames.len(), label_histogram: set.label_histogram() })
}

/// Every labeled frame of a data directory, trial by trial.
pub fn load_frames(dir: &Path) -> CliResult<Vec<LabeledImage>> {
    let mut out = Vec::new();
    for demo in list_demos(dir)? {
        let (frames, labels) = companions(&demo);
        let images = read_image_block(&frames)?;
        let labels: Vec<LabelRecord> = read_jsonl(&labels)?;
        if labels.len() != images.len() {
            return Err(CliError::Data(format!("{}: {} labels for {} frames", demo.display(), labels.len(), images.len())));
        }
        for l in labels {
            let image = images.get(l.index).cloned().ok_or_else(|| CliError::Data(format!("label index {} out of range", l.index)))?;
            out.push(LabeledImage { image, label: l.label });
        }
    }
    Ok(out)
}

pub fn load_demos(dir: &Path) -> CliResult<Vec<Demo>> {
    list_demos(dir)?.iter().map(|p| Ok(Demo { seed: 0, records: read_demo(p)? })).collect()
}

pub fn register(cfg: &PipelineConfig, dir: &Path) -> CliResult<Vec<RegisteredDemoSet>> {
    let demos = load_demos(dir)?;
    let mut sets = Vec::new();
    for arm in Arm::BOTH {
        let trajs = demos
            .iter()
            .map(|d| d.trajectory(arm).map(|t| t.decimate(cfg.registration.decimate)))
            .collect::<sharedctl::Result<Vec<_>>>()?;
        sets.push(register_demos(&trajs, &cfg.registration.icp)?);
    }
    Ok(sets)
}

/// Runs seeds `first..first + n`, writing each log and the metrics file.
pub fn episodes(
    cfg: &PipelineConfig,
    mode: EpisodeMode,
    first: u64,
    n: usize,
    models: EpisodeModels,
    dir: &Path,
) -> CliResult<MetricsFile> {
    let name = mode_name(mode);
    let mut runs = Vec::with_capacity(n);
    for k in 0..n as u64 {
        let seed = first + k;
        let log = run_episode(mode, models, &cfg.episode(), seed)?;
        write_log(&dir.join("episodes").join(format!("{name}_{seed}.jsonl")), &log)?;
        runs.push(SeedMetrics { seed, metrics: compute_metrics(&log)? });
    }
    let file = MetricsFile { mode, runs };
    write_metrics(&dir.join(format!("metrics_{name}.json")), &file)?;
    Ok(file)
}

pub fn mode_name(mode: EpisodeMode) -> &'static str {
    match mode {
        EpisodeMode::Manual => "manual",
        EpisodeMode::Autonomous => "auto",
        EpisodeMode::Shared => "shared",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub a: EpisodeMode,
    pub b: EpisodeMode,
    pub n: usize,
    pub metrics: BTreeMap<&'static str, Comparison>,
}

/// Pairs runs by seed and compares M, T, A and C.
pub fn compare(a: &MetricsFile, b: &MetricsFile) -> CliResult<CompareReport> {
    let seeds = |f: &MetricsFile| f.runs.iter().map(|r| r.seed).collect::<Vec<_>>();
    if seeds(a) != seeds(b) {
        return Err(CliError::Data("metrics files are not paired by seed".into()));
    }
    let col = |f: &MetricsFile, k: usize| -> Vec<f64> {
        f.runs
            .iter()
            .map(|r| match k {
                0 => r.metrics.m,
                1 => r.metrics.t,
                2 => r.metrics.a,
                _ => r.metrics.c as f64,
            })
            .collect()
    };
    let mut metrics = BTreeMap::new();
    for (k, name) in ["M", "T", "A", "C"].into_iter().enumerate() {
        metrics.insert(name, stats_compare(&col(a, k), &col(b, k))?);
    }
    Ok(CompareReport { a: a.mode, b: b.mode, n: a.runs.len(), metrics })
}
