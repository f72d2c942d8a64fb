//! Fixtures shared by the benchmarks.

use nalgebra::Vector3;

/// Smooth non-planar curve, 80 mm long, sampled at `n` points.
pub fn curve(n: usize, phase: f64) -> Vec<Vector3<f64>> {
    (0..n)
        .map(|i| {
            let s = i as f64 / (n.max(2) - 1) as f64;
            Vector3::new(0.08 * s, 0.03 * (5.0 * s + phase).sin(), 0.02 * (3.0 * s).cos())
        })
        .collect()
}

/// Scalar series resembling a speed profile.
pub fn series(n: usize, phase: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.07 + phase).sin() + 0.3 * (i as f64 * 0.013).cos()).collect()
}
