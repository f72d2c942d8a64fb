use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::state::SimState;
use crate::context::Image;
use crate::trajectory::Arm;

const SUPERSAMPLE: usize = 4;
const SITE_RADIUS: f64 = 0.004;
const MARKER_RADIUS: f64 = 0.003;
const PEG_RADIUS: f64 = 0.0025;
const SHAFT_LENGTH: f64 = 0.04;
const SHAFT_HALF_WIDTH: f64 = 0.0012;

/// Intensities and nuisance parameters of the synthetic scene camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub background: f32,
    pub site: f32,
    /// Site the current phase works at.
    pub target: f32,
    /// Handoff point marker while the tools meet.
    pub marker: f32,
    pub peg: f32,
    /// The tool doing the phase's work, then the other one.
    pub active_tool: f32,
    pub passive_tool: f32,
    /// Whole-scene shift on the board, metres.
    pub offset: [f64; 2],
    /// Per-pixel Gaussian noise σ; 0 disables it.
    pub noise: f32,
    pub seed: u64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background: 0.0,
            site: 0.3,
            target: 0.55,
            marker: 0.45,
            peg: 1.0,
            active_tool: 0.8,
            passive_tool: 0.62,
            offset: [0.0, 0.0],
            noise: 0.0,
            seed: 0,
        }
    }
}

impl RenderStyle {
    /// A shifted, re-lit and noisy camera standing in for a new domain.
    pub fn perturbed(seed: u64) -> Self {
        Self {
            background: 0.1,
            site: 0.38,
            target: 0.6,
            marker: 0.5,
            peg: 0.92,
            active_tool: 0.72,
            passive_tool: 0.52,
            offset: [0.002, -0.0015],
            noise: 0.03,
            seed,
        }
    }
}

/// Supersampled canvas in board coordinates.
struct Canvas {
    n: usize,
    half: f64,
    offset: Vector2<f64>,
    px: Vec<f32>,
}

impl Canvas {
    fn new(size: usize, half: f64, style: &RenderStyle) -> Self {
        let n = size * SUPERSAMPLE;
        Self { n, half, offset: Vector2::new(style.offset[0], style.offset[1]), px: vec![style.background; n * n] }
    }

    fn cell(&self) -> f64 {
        2.0 * self.half / self.n as f64
    }

    /// Board point of subpixel (i, j); row 0 is +y.
    fn point(&self, i: usize, j: usize) -> Vector2<f64> {
        let c = self.cell();
        Vector2::new(-self.half + (i as f64 + 0.5) * c, self.half - (j as f64 + 0.5) * c) - self.offset
    }

    fn index_range(&self, lo: f64, hi: f64, flip: bool) -> std::ops::Range<usize> {
        let c = self.cell();
        let (lo, hi) = if flip { (self.half - hi, self.half - lo) } else { (lo + self.half, hi + self.half) };
        let a = ((lo / c).floor().max(0.0)) as usize;
        let b = ((hi / c).ceil().max(0.0) as usize).min(self.n);
        a.min(self.n)..b
    }

    fn paint(&mut self, min: Vector2<f64>, max: Vector2<f64>, value: f32, inside: impl Fn(&Vector2<f64>) -> bool) {
        let min = min + self.offset;
        let max = max + self.offset;
        for j in self.index_range(min.y, max.y, true) {
            for i in self.index_range(min.x, max.x, false) {
                if inside(&self.point(i, j)) {
                    self.px[j * self.n + i] = value;
                }
            }
        }
    }

    fn disc(&mut self, c: Vector2<f64>, r: f64, value: f32) {
        let d = Vector2::new(r, r);
        self.paint(c - d, c + d, value, |p| (p - c).norm_squared() <= r * r);
    }

    fn bar(&mut self, a: Vector2<f64>, b: Vector2<f64>, half_width: f64, value: f32) {
        let ab = b - a;
        let len2 = ab.norm_squared();
        let pad = Vector2::new(half_width, half_width);
        self.paint(a.inf(&b) - pad, a.sup(&b) + pad, value, |p| {
            let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
            (p - (a + ab * t)).norm_squared() <= half_width * half_width
        });
    }

    fn downsample(&self, size: usize) -> Vec<f32> {
        let k = SUPERSAMPLE;
        let mut out = vec![0f32; size * size];
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0f32;
                for dy in 0..k {
                    let row = (y * k + dy) * self.n + x * k;
                    acc += self.px[row..row + k].iter().sum::<f32>();
                }
                out[y * size + x] = acc / (k * k) as f32;
            }
        }
        out
    }
}

fn xy(p: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Top-down grayscale view of the board with the nominal camera.
pub fn render_observation(state: &SimState, cfg: &SimConfig) -> Image {
    render_styled(state, cfg, &RenderStyle::default())
}

pub fn render_styled(state: &SimState, cfg: &SimConfig, style: &RenderStyle) -> Image {
    let size = cfg.image_size;
    let mut cv = Canvas::new(size, cfg.view_half_width, style);
    for n in 1..=3u8 {
        let v = if state.phase.site() == Some(n) { style.target } else { style.site };
        cv.disc(xy(&cfg.site(n)), SITE_RADIUS, v);
    }
    if state.phase.is_handoff() {
        cv.disc(xy(&cfg.handoff), MARKER_RADIUS, style.marker);
    }
    let active = state.phase.active_arm();
    for arm in Arm::BOTH {
        let tool = state.tool(arm);
        let v = if active == Some(arm) { style.active_tool } else { style.passive_tool };
        let yaw = cfg.tool_yaw[arm.index()];
        let tip = xy(&tool.p);
        let back = tip + Vector2::new(yaw.cos(), yaw.sin()) * SHAFT_LENGTH;
        cv.bar(tip, back, SHAFT_HALF_WIDTH, v);
        // jaws: open jaws read wider, a raised tool reads larger
        let r = if tool.grip { 0.0015 } else { 0.0022 } + 0.1 * tool.p.z.clamp(0.0, 0.02);
        cv.disc(tip, r, v);
    }
    cv.disc(xy(&state.peg.p), PEG_RADIUS, style.peg);
    let mut data = cv.downsample(size);
    if style.noise > 0.0 {
        let frame = (state.clock / cfg.dt).round() as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(style.seed ^ frame.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let normal = Normal::new(0.0f32, style.noise).expect("finite σ");
        for v in &mut data {
            *v += normal.sample(&mut rng);
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }
    Image::new(size, size, data).expect("square canvas").quantized()
}
