use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContextProbs, Image, CONTEXT_COUNT};
use crate::error::{Error, Result};

/// 3×3 convolution with padding 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub filters: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierArch {
    /// Side of the square grayscale input.
    pub input_size: usize,
    pub conv: Vec<ConvSpec>,
    /// Hidden fully connected widths; the 3-way output layer is implicit.
    pub fc: Vec<usize>,
}

impl ClassifierArch {
    /// 64×64 input, three stride-2 convolutions (8, 16, 32 filters), one
    /// hidden layer of 64.
    pub fn desk() -> Self {
        Self {
            input_size: 64,
            conv: vec![ConvSpec { filters: 8, stride: 2 }, ConvSpec { filters: 16, stride: 2 }, ConvSpec { filters: 32, stride: 2 }],
            fc: vec![64],
        }
    }

    /// 150×150 input with six convolutions and two fully connected layers.
    /// Filter counts and strides are assumptions.
    pub fn full_scale() -> Self {
        let c = |filters, stride| ConvSpec { filters, stride };
        Self { input_size: 150, conv: vec![c(16, 2), c(16, 1), c(32, 2), c(32, 1), c(64, 2), c(64, 2)], fc: vec![128] }
    }

    /// Same layer pattern as [`desk`](Self::desk) on a smaller input.
    pub fn small(input_size: usize, hidden: usize) -> Self {
        Self { input_size, fc: vec![hidden], ..Self::desk() }
    }

    pub fn layer_count(&self) -> usize {
        self.conv.len() + self.fc.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_size == 0
            || self.conv.iter().any(|c| c.filters == 0 || c.stride == 0)
            || self.fc.iter().any(|&w| w == 0)
        {
            return Err(Error::InvalidConfig(format!("invalid classifier architecture {self:?}")));
        }
        Ok(())
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut out = Vec::new();
        let mut off = 0;
        let (mut c, mut h) = (1usize, self.input_size);
        for spec in &self.conv {
            let oh = (h - 1) / spec.stride + 1;
            let w_len = spec.filters * c * 9;
            out.push(Layer::Conv { in_c: c, in_h: h, out_c: spec.filters, out_h: oh, stride: spec.stride, w_off: off, b_off: off + w_len });
            off += w_len + spec.filters;
            c = spec.filters;
            h = oh;
        }
        let mut n = c * h * h;
        let widths: Vec<usize> = self.fc.iter().copied().chain([CONTEXT_COUNT]).collect();
        for (i, &m) in widths.iter().enumerate() {
            out.push(Layer::Fc { in_n: n, out_n: m, relu: i + 1 < widths.len(), w_off: off, b_off: off + n * m });
            off += n * m + m;
            n = m;
        }
        out
    }

    /// Start offset of every layer's parameter block, plus the total.
    pub fn offsets(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.layers().iter().map(|l| l.w_off()).collect();
        v.push(self.param_count());
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers().last().map(|l| l.b_off() + l.bias_len()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Layer {
    Conv { in_c: usize, in_h: usize, out_c: usize, out_h: usize, stride: usize, w_off: usize, b_off: usize },
    Fc { in_n: usize, out_n: usize, relu: bool, w_off: usize, b_off: usize },
}

impl Layer {
    fn w_off(&self) -> usize {
        match *self {
            Layer::Conv { w_off, .. } | Layer::Fc { w_off, .. } => w_off,
        }
    }

    fn b_off(&self) -> usize {
        match *self {
            Layer::Conv { b_off, .. } | Layer::Fc { b_off, .. } => b_off,
        }
    }

    fn bias_len(&self) -> usize {
        match *self {
            Layer::Conv { out_c, .. } => out_c,
            Layer::Fc { out_n, .. } => out_n,
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv { in_c, .. } => in_c * 9,
            Layer::Fc { in_n, .. } => in_n,
        }
    }

    fn relu(&self) -> bool {
        match *self {
            Layer::Conv { .. } => true,
            Layer::Fc { relu, .. } => relu,
        }
    }

    fn forward(&self, p: &[f64], input: &[f64]) -> Vec<f64> {
        let mut out = match *self {
            Layer::Conv { in_c, in_h, out_c, out_h, stride, w_off, b_off } => {
                let mut out = vec![0.0; out_c * out_h * out_h];
                for f in 0..out_c {
                    let plane = &mut out[f * out_h * out_h..(f + 1) * out_h * out_h];
                    plane.iter_mut().for_each(|v| *v = p[b_off + f]);
                    for c in 0..in_c {
                        let src = &input[c * in_h * in_h..(c + 1) * in_h * in_h];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let w = p[w_off + ((f * in_c + c) * 3 + ky) * 3 + kx];
                                for oy in 0..out_h {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    let row = &src[iy as usize * in_h..(iy as usize + 1) * in_h];
                                    let dst = &mut plane[oy * out_h..(oy + 1) * out_h];
                                    for (ox, d) in dst.iter_mut().enumerate() {
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if ix >= 0 && ix < in_h as isize {
                                            *d += w * row[ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                out
            }
            Layer::Fc { in_n, out_n, w_off, b_off, .. } => (0..out_n)
                .map(|o| {
                    let w = &p[w_off + o * in_n..w_off + (o + 1) * in_n];
                    p[b_off + o] + w.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect(),
        };
        if self.relu() {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    /// Accumulates parameter gradients into `grad` (when `params_needed`)
    /// and returns the gradient with respect to the input (when
    /// `input_needed`). `d_out` is taken with respect to the activated
    /// output and masked here.
    fn backward(
        &self,
        p: &[f64],
        input: &[f64],
        output: &[f64],
        mut d_out: Vec<f64>,
        grad: &mut [f64],
        params_needed: bool,
        input_needed: bool,
    ) -> Vec<f64> {
        if self.relu() {
            for (d, o) in d_out.iter_mut().zip(output) {
                if *o <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        match *self {
            Layer::Conv { in_c, in_h, out_c, out_h, stride, w_off, b_off } => {
                let mut d_in = if input_needed { vec![0.0; input.len()] } else { Vec::new() };
                for f in 0..out_c {
                    let dplane = &d_out[f * out_h * out_h..(f + 1) * out_h * out_h];
                    if params_needed {
                        grad[b_off + f] += dplane.iter().sum::<f64>();
                    }
                    for c in 0..in_c {
                        let src = &input[c * in_h * in_h..(c + 1) * in_h * in_h];
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let wi = w_off + ((f * in_c + c) * 3 + ky) * 3 + kx;
                                let w = p[wi];
                                let mut gw = 0.0;
                                for oy in 0..out_h {
                                    let iy = (oy * stride + ky) as isize - 1;
                                    if iy < 0 || iy >= in_h as isize {
                                        continue;
                                    }
                                    let iy = iy as usize;
                                    for ox in 0..out_h {
                                        let ix = (ox * stride + kx) as isize - 1;
                                        if ix < 0 || ix >= in_h as isize {
                                            continue;
                                        }
                                        let g = dplane[oy * out_h + ox];
                                        gw += g * src[iy * in_h + ix as usize];
                                        if input_needed {
                                            d_in[c * in_h * in_h + iy * in_h + ix as usize] += w * g;
                                        }
                                    }
                                }
                                if params_needed {
                                    grad[wi] += gw;
                                }
                            }
                        }
                    }
                }
                d_in
            }
            Layer::Fc { in_n, out_n, w_off, b_off, .. } => {
                let mut d_in = if input_needed { vec![0.0; in_n] } else { Vec::new() };
                for o in 0..out_n {
                    let g = d_out[o];
                    if g == 0.0 {
                        continue;
                    }
                    if params_needed {
                        grad[b_off + o] += g;
                        let gw = &mut grad[w_off + o * in_n..w_off + (o + 1) * in_n];
                        for (gwi, x) in gw.iter_mut().zip(input) {
                            *gwi += g * x;
                        }
                    }
                    if input_needed {
                        let w = &p[w_off + o * in_n..w_off + (o + 1) * in_n];
                        for (d, wi) in d_in.iter_mut().zip(w) {
                            *d += g * wi;
                        }
                    }
                }
                d_in
            }
        }
    }
}

/// A convolutional context classifier with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    arch: ClassifierArch,
    params: Vec<f64>,
    frozen_prefix: usize,
    seed: u64,
}

/// Gradient of the loss with respect to the flat parameter vector.
pub type Gradient = Vec<f64>;

/// `−ln p[label]`, floored to stay finite.
pub fn cross_entropy(probs: &ContextProbs, label: usize) -> f64 {
    -probs.get(label).max(1e-300).ln()
}

impl Classifier {
    /// Fan-in scaled uniform weights (He bound `√(6/fan_in)`; the output
    /// layer is shrunk tenfold so initial predictions are near uniform),
    /// zero biases.
    pub fn new(arch: ClassifierArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = arch.layers();
        let mut params = vec![0.0; arch.param_count()];
        let last = layers.len() - 1;
        for (i, l) in layers.iter().enumerate() {
            let mut bound = (6.0 / l.fan_in() as f64).sqrt();
            if i == last {
                bound *= 0.1;
            }
            for v in &mut params[l.w_off()..l.b_off()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { arch, params, frozen_prefix: 0, seed })
    }

    pub fn from_parts(arch: ClassifierArch, params: Vec<f64>, frozen_prefix: usize, seed: u64) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::SizeMismatch { expected: arch.param_count(), got: params.len() });
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite classifier parameter".into()));
        }
        if frozen_prefix > arch.layer_count() {
            return Err(Error::InvalidConfig(format!("cannot freeze {frozen_prefix} of {} layers", arch.layer_count())));
        }
        Ok(Self { arch, params, frozen_prefix, seed })
    }

    pub fn arch(&self) -> &ClassifierArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn frozen_prefix(&self) -> usize {
        self.frozen_prefix
    }

    pub fn set_frozen_prefix(&mut self, layers: usize) -> Result<()> {
        if layers > self.arch.layer_count() {
            return Err(Error::InvalidConfig(format!("cannot freeze {layers} of {} layers", self.arch.layer_count())));
        }
        self.frozen_prefix = layers;
        Ok(())
    }

    /// First parameter offset that training may change.
    pub fn frozen_boundary(&self) -> usize {
        self.arch.offsets()[self.frozen_prefix]
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Rounds every parameter to the nearest f32, the precision of the
    /// on-disk format.
    pub fn quantize(&mut self) {
        for v in &mut self.params {
            *v = *v as f32 as f64;
        }
    }

    fn check(&self, img: &Image) -> Result<Vec<f64>> {
        let n = self.arch.input_size;
        if img.width() != n || img.height() != n {
            return Err(Error::SizeMismatch { expected: n * n, got: img.width() * img.height() });
        }
        Ok(img.data().iter().map(|&v| v as f64).collect())
    }

    fn activations(&self, input: Vec<f64>) -> Vec<Vec<f64>> {
        let layers = self.arch.layers();
        let mut acts = Vec::with_capacity(layers.len() + 1);
        acts.push(input);
        for l in &layers {
            let next = l.forward(&self.params, acts.last().unwrap());
            acts.push(next);
        }
        acts
    }

    pub fn logits(&self, img: &Image) -> Result<[f64; CONTEXT_COUNT]> {
        let acts = self.activations(self.check(img)?);
        let z = acts.last().unwrap();
        Ok([z[0], z[1], z[2]])
    }

    pub fn forward(&self, img: &Image) -> Result<ContextProbs> {
        Ok(ContextProbs::from_logits(&self.logits(img)?))
    }

    /// Cross-entropy loss of one labeled image, adding its gradient into
    /// `grad`. Gradients of frozen layers are left untouched.
    pub fn accumulate_gradient(&self, img: &Image, label: usize, grad: &mut [f64]) -> Result<(f64, ContextProbs)> {
        self.accumulate_gradient_from(img, label, grad, self.frozen_prefix)
    }

    /// As [`accumulate_gradient`](Self::accumulate_gradient) but with every
    /// layer's gradient computed, ignoring the frozen prefix.
    pub fn full_gradient(&self, img: &Image, label: usize) -> Result<(f64, Gradient)> {
        let mut g = vec![0.0; self.params.len()];
        let (loss, _) = self.accumulate_gradient_from(img, label, &mut g, 0)?;
        Ok((loss, g))
    }

    fn accumulate_gradient_from(
        &self,
        img: &Image,
        label: usize,
        grad: &mut [f64],
        first_trainable: usize,
    ) -> Result<(f64, ContextProbs)> {
        if label >= CONTEXT_COUNT {
            return Err(Error::OutOfRange(format!("label {label}")));
        }
        if grad.len() != self.params.len() {
            return Err(Error::SizeMismatch { expected: self.params.len(), got: grad.len() });
        }
        let acts = self.activations(self.check(img)?);
        let z = acts.last().unwrap();
        let probs = ContextProbs::from_logits(&[z[0], z[1], z[2]]);
        let loss = cross_entropy(&probs, label);
        let mut d: Vec<f64> = (0..CONTEXT_COUNT).map(|c| probs.get(c) - if c == label { 1.0 } else { 0.0 }).collect();
        let layers = self.arch.layers();
        for i in (first_trainable..layers.len()).rev() {
            d = layers[i].backward(&self.params, &acts[i], &acts[i + 1], d, grad, true, i > first_trainable);
        }
        Ok((loss, probs))
    }
}
