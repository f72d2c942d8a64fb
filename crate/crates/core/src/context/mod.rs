//! Frame-level operation-context recognition: grayscale images, a small
//! convolutional classifier, Adam training with early stopping, and
//! frozen-prefix fine-tuning.

mod image;
mod io;
mod network;
mod train;

pub use image::{preprocess, Image, RawImage};
pub use io::{load_classifier, read_classifier, save_classifier, write_classifier};
pub use network::{cross_entropy, ClassifierArch, Classifier, ConvSpec, Gradient};
pub use train::{evaluate, finetune, predict_context, train, EpochStats, LabeledImage, TrainConfig, TrainReport};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of operation contexts: move to next target, bimanual operation,
/// local operation.
pub const CONTEXT_COUNT: usize = 3;

pub const CONTEXT_NAMES: [&str; CONTEXT_COUNT] = ["move to next target", "bimanual operation", "local operation"];

/// Softmax output over the three contexts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 3]", into = "[f64; 3]")]
pub struct ContextProbs {
    p: [f64; CONTEXT_COUNT],
}

impl ContextProbs {
    pub fn new(p: [f64; CONTEXT_COUNT]) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::OutOfRange(format!("not a probability vector: {p:?}")));
        }
        Ok(Self { p })
    }

    pub fn uniform() -> Self {
        Self { p: [1.0 / 3.0; CONTEXT_COUNT] }
    }

    /// Numerically stable softmax.
    pub fn from_logits(z: &[f64; CONTEXT_COUNT]) -> Self {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e = z.map(|v| (v - m).exp());
        let s: f64 = e.iter().sum();
        Self { p: e.map(|v| v / s) }
    }

    pub fn get(&self, c: usize) -> f64 {
        self.p[c]
    }

    pub fn as_array(&self) -> [f64; CONTEXT_COUNT] {
        self.p
    }

    /// Most probable context; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for c in 1..CONTEXT_COUNT {
            if self.p[c] > self.p[best] {
                best = c;
            }
        }
        best
    }
}

impl TryFrom<[f64; 3]> for ContextProbs {
    type Error = Error;

    fn try_from(p: [f64; 3]) -> Result<Self> {
        Self::new(p)
    }
}

impl From<ContextProbs> for [f64; 3] {
    fn from(p: ContextProbs) -> Self {
        p.p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(ContextProbs::new([0.2, 0.5, 0.3]).unwrap().argmax(), 1);
        assert_eq!(ContextProbs::uniform().argmax(), 0);
        assert_eq!(ContextProbs::new([0.1, 0.45, 0.45]).unwrap().argmax(), 1);
    }

    #[test]
    fn rejects_non_simplex() {
        assert!(ContextProbs::new([0.5, 0.5, 0.1]).is_err());
        assert!(ContextProbs::new([1.2, -0.1, -0.1]).is_err());
    }

    #[test]
    fn softmax_shift_invariant() {
        let z = [0.3, -1.2, 2.5];
        let a = ContextProbs::from_logits(&z);
        let b = ContextProbs::from_logits(&z.map(|v| v + 417.0));
        for c in 0..3 {
            assert!((a.get(c) - b.get(c)).abs() < 1e-12);
        }
        assert!((a.as_array().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let flat = ContextProbs::from_logits(&[0.0; 3]);
        assert_eq!(flat.argmax(), 0);
        assert!((flat.get(2) - 1.0 / 3.0).abs() < 1e-15);
    }
}
