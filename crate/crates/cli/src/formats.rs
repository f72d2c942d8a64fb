//! On-disk formats. Every writer has a reader returning an equal value.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sharedctl::context::Image;
use sharedctl::sim::{DemoRecord, EpisodeLog, EpisodeMode, Metrics, SimEvent, StepRecord};

use crate::error::{CliError, CliResult};

pub const MODEL_VERSION: u32 = 1;

fn data_err(path: &Path, what: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {what}", path.display()))
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn open(path: &Path) -> CliResult<BufReader<fs::File>> {
    fs::File::open(path).map(BufReader::new).map_err(|e| data_err(path, e))
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    #[serde(rename = "type")]
    kind: String,
    version: u32,
    body: T,
}

/// JSON model file with a `{type, version, body}` envelope.
pub fn write_model<T: Serialize>(path: &Path, kind: &str, body: &T) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &Envelope { kind: kind.to_string(), version: MODEL_VERSION, body })?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_model<T: DeserializeOwned>(path: &Path, kind: &str) -> CliResult<T> {
    let env: Envelope<T> = serde_json::from_reader(open(path)?).map_err(|e| data_err(path, e))?;
    if env.kind != kind || env.version != MODEL_VERSION {
        return Err(data_err(path, format!("expected {kind} v{MODEL_VERSION}, found {} v{}", env.kind, env.version)));
    }
    Ok(env.body)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> CliResult<()> {
    let mut w = create(path)?;
    for it in items {
        serde_json::to_writer(&mut w, &it)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| data_err(path, format!("line {}: {e}", n + 1)))?);
    }
    Ok(out)
}

/// Demonstration file: one `{t, left, right}` record per line.
pub fn write_demo(path: &Path, records: &[DemoRecord]) -> CliResult<()> {
    write_jsonl(path, records)
}

pub fn read_demo(path: &Path) -> CliResult<Vec<DemoRecord>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    /// Position in the matching image block.
    pub index: usize,
    /// Episode step the frame was rendered at.
    pub step: usize,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct BlockHeader {
    format: String,
    width: usize,
    height: usize,
    count: usize,
}

/// Raw 8-bit grayscale frames after a one-line JSON header.
pub fn write_image_block(path: &Path, images: &[Image]) -> CliResult<()> {
    let (width, height) = images.first().map_or((0, 0), |i| (i.width(), i.height()));
    if images.iter().any(|i| i.width() != width || i.height() != height) {
        return Err(data_err(path, "images in a block must share one size"));
    }
    let mut w = create(path)?;
    let header = BlockHeader { format: "gray8".into(), width, height, count: images.len() };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for img in images {
        w.write_all(&img.to_gray8())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_image_block(path: &Path) -> CliResult<Vec<Image>> {
    let mut r = open(path)?;
    let mut line = String::new();
    r.read_line(&mut line)?;
    let h: BlockHeader = serde_json::from_str(&line).map_err(|e| data_err(path, e))?;
    if h.format != "gray8" {
        return Err(data_err(path, format!("unsupported image format {}", h.format)));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let size = h.width * h.height;
    if bytes.len() != size * h.count {
        return Err(data_err(path, format!("expected {} pixel bytes, found {}", size * h.count, bytes.len())));
    }
    if size == 0 {
        return Ok(Vec::new());
    }
    bytes.chunks_exact(size).map(|c| Image::from_gray8(h.width, h.height, c).map_err(CliError::from)).collect()
}

/// One line of an episode log file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header { seed: u64, mode: EpisodeMode, success: bool },
    Step(StepRecord),
    Event(SimEvent),
}

pub fn write_log(path: &Path, log: &EpisodeLog) -> CliResult<()> {
    let header = LogLine::Header { seed: log.seed, mode: log.mode, success: log.success };
    let lines = std::iter::once(header)
        .chain(log.steps.iter().cloned().map(LogLine::Step))
        .chain(log.events.iter().copied().map(LogLine::Event));
    write_jsonl(path, lines)
}

pub fn read_log(path: &Path) -> CliResult<EpisodeLog> {
    let lines: Vec<LogLine> = read_jsonl(path)?;
    let mut it = lines.into_iter();
    let Some(LogLine::Header { seed, mode, success }) = it.next() else {
        return Err(data_err(path, "log does not start with a header line"));
    };
    let mut log = EpisodeLog { seed, mode, success, steps: Vec::new(), events: Vec::new() };
    for line in it {
        match line {
            LogLine::Step(s) => log.steps.push(s),
            LogLine::Event(e) => log.events.push(e),
            LogLine::Header { .. } => return Err(data_err(path, "second header line")),
        }
    }
    Ok(log)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    #[serde(flatten)]
    pub metrics: Metrics,
}

/// Metrics of a batch of episodes in one mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub mode: EpisodeMode,
    pub runs: Vec<SeedMetrics>,
}

pub fn write_metrics(path: &Path, m: &MetricsFile) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, m)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> CliResult<MetricsFile> {
    serde_json::from_reader(open(path)?).map_err(|e| data_err(path, e))
}

pub fn trial_stem(trial: usize) -> String {
    format!("trial_{trial:03}")
}

/// Demonstration files of a data directory in trial order.
pub fn list_demos(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| data_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("trial_") && name.ends_with(".jsonl") && !name.ends_with(".labels.jsonl")
        })
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(data_err(dir, "no demonstration files"));
    }
    Ok(out)
}

/// The `.frames` and `.labels.jsonl` companions of a demonstration file.
pub fn companions(demo: &Path) -> (PathBuf, PathBuf) {
    let stem = demo.file_stem().and_then(|s| s.to_str()).unwrap_or("trial");
    let dir = demo.parent().unwrap_or(Path::new("."));
    (dir.join(format!("{stem}.frames")), dir.join(format!("{stem}.labels.jsonl")))
}
