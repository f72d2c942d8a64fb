use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidConfig("image has a zero dimension".into()));
        }
        if data.len() != width * height {
            return Err(Error::SizeMismatch { expected: width * height, got: data.len() });
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("image intensity outside [0, 1]".into()));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Decodes 8-bit gray levels.
    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    /// Encodes as 8-bit gray levels, rounding to nearest.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    /// Snaps every intensity to the nearest 8-bit level, so that the image
    /// survives a gray8 round trip unchanged.
    pub fn quantized(mut self) -> Self {
        for v in &mut self.data {
            *v = (*v * 255.0).round() / 255.0;
        }
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Decoded camera frame before preprocessing: 1 (gray) or 3 (RGB)
/// interleaved channels, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Fractional-overlap weights of each output cell over the input cells.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let mut w = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    w.push((i, overlap / scale));
                }
                i += 1;
            }
            w
        })
        .collect()
}

/// Luminance conversion followed by an area-average resize to a square
/// `target × target` image.
pub fn preprocess(raw: &RawImage, target: usize) -> Result<Image> {
    if raw.width == 0 || raw.height == 0 || target == 0 {
        return Err(Error::InvalidConfig("image has a zero dimension".into()));
    }
    let n = raw.width * raw.height;
    if !(raw.channels == 1 || raw.channels == 3) || raw.data.len() != n * raw.channels {
        return Err(Error::SizeMismatch { expected: n * raw.channels.max(1), got: raw.data.len() });
    }
    let gray: Vec<f64> = if raw.channels == 1 {
        raw.data.iter().map(|&v| v as f64).collect()
    } else {
        raw.data
            .chunks_exact(3)
            .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
            .collect()
    };
    let wx = area_weights(raw.width, target);
    let wy = area_weights(raw.height, target);
    // rows first, then columns
    let mut tmp = vec![0.0f64; raw.height * target];
    for y in 0..raw.height {
        for (ox, ws) in wx.iter().enumerate() {
            tmp[y * target + ox] = ws.iter().map(|&(x, w)| gray[y * raw.width + x] * w).sum();
        }
    }
    let mut out = vec![0.0f32; target * target];
    for (oy, ws) in wy.iter().enumerate() {
        for ox in 0..target {
            let v: f64 = ws.iter().map(|&(y, w)| tmp[y * target + ox] * w).sum();
            out[oy * target + ox] = v.clamp(0.0, 1.0) as f32;
        }
    }
    Image::new(target, target, out)
}
