//! Classifier file layout:
//!
//! ```text
//! b"SCCLF\0v1"                 8-byte magic
//! u32 LE                       header length in bytes
//! JSON header                  {"arch", "offsets", "seed", "frozen_prefix", "param_count"}
//! param_count × f32 LE         flat parameter vector
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{ClassifierArch, Classifier};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SCCLF\0v1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ClassifierArch,
    offsets: Vec<usize>,
    seed: u64,
    frozen_prefix: usize,
    param_count: usize,
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidConfig(format!("classifier i/o: {e}"))
}

pub fn write_classifier<W: Write>(clf: &Classifier, mut w: W) -> Result<()> {
    let header = Header {
        arch: clf.arch().clone(),
        offsets: clf.arch().offsets(),
        seed: clf.seed(),
        frozen_prefix: clf.frozen_prefix(),
        param_count: clf.params().len(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut buf = Vec::with_capacity(12 + json.len() + 4 * clf.params().len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for &v in clf.params() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf).map_err(io_err)
}

pub fn read_classifier<R: Read>(mut r: R) -> Result<Classifier> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(io_err)?;
    let bad = |m: &str| Error::InvalidConfig(format!("malformed classifier file: {m}"));
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    if header.param_count != header.arch.param_count() || header.offsets != header.arch.offsets() {
        return Err(bad("header disagrees with architecture"));
    }
    let payload = &bytes[12 + hlen..];
    if payload.len() != 4 * header.param_count {
        return Err(Error::SizeMismatch { expected: 4 * header.param_count, got: payload.len() });
    }
    let params = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
    Classifier::from_parts(header.arch, params, header.frozen_prefix, header.seed)
}

pub fn save_classifier(clf: &Classifier, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(io_err)?;
    write_classifier(clf, std::io::BufWriter::new(f))
}

pub fn load_classifier(path: &Path) -> Result<Classifier> {
    let f = std::fs::File::open(path).map_err(io_err)?;
    read_classifier(std::io::BufReader::new(f))
}
