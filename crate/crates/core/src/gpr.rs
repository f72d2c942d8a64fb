//! Gaussian process regression with a squared-exponential kernel, fitted
//! independently per spatial dimension over normalized time.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registration::RegisteredDemoSet;
use crate::trajectory::Arm;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GprHyper {
    /// Kernel lengthscale in normalized-time units.
    pub lengthscale: f64,
    /// Signal variance σf², m².
    pub signal_var: f64,
    /// Observation noise variance σn², m².
    pub noise_var: f64,
}

impl GprHyper {
    pub fn new(lengthscale: f64, signal_var: f64, noise_var: f64) -> Result<Self> {
        let h = Self { lengthscale, signal_var, noise_var };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.lengthscale.is_finite() && self.signal_var.is_finite() && self.noise_var.is_finite();
        if !finite || self.lengthscale <= 0.0 || self.signal_var <= 0.0 || self.noise_var < 0.0 {
            return Err(Error::InvalidConfig(format!("invalid GPR hyperparameters {self:?}")));
        }
        Ok(())
    }
}

/// `σf² · exp(−(x − x′)² / 2ℓ²)`
pub fn se_kernel(x: f64, x_prime: f64, hyper: &GprHyper) -> f64 {
    let d = x - x_prime;
    hyper.signal_var * (-d * d / (2.0 * hyper.lengthscale * hyper.lengthscale)).exp()
}

fn gram(x: &[f64], hyper: &GprHyper) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x.len(), |i, j| se_kernel(x[i], x[j], hyper))
}

/// Jitter ladder applied on top of σn²: none, then 1e-10·σf² up to
/// 1e-4·σf² in decades.
fn jitter_ladder(signal_var: f64) -> impl Iterator<Item = f64> {
    std::iter::once(0.0).chain((0..7).map(move |k| signal_var * 10f64.powi(k - 10)))
}

/// Lower-triangular Cholesky factor, or `None` unless every pivot is
/// strictly positive and finite.
fn cholesky(mut a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        a[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Some(a)
}

fn factorize(x: &[f64], hyper: &GprHyper) -> Result<(DMatrix<f64>, f64)> {
    let base = gram(x, hyper);
    let mut last = 0.0;
    for jitter in jitter_ladder(hyper.signal_var) {
        last = jitter;
        let mut k = base.clone();
        for i in 0..x.len() {
            k[(i, i)] += hyper.noise_var + jitter;
        }
        if let Some(l) = cholesky(k) {
            return Ok((l, jitter));
        }
    }
    Err(Error::NotPositiveDefinite { jitter: last })
}

/// A fitted zero-mean GP (plus a constant `offset` added back on
/// prediction) with its cached factorization.
#[derive(Debug, Clone)]
pub struct GprModel {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    hyper: GprHyper,
    offset: f64,
    jitter: f64,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
}

impl GprModel {
    pub fn hyper(&self) -> &GprHyper {
        &self.hyper
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Log marginal likelihood of the (offset-removed) training targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let f = DVector::from_iterator(self.targets.len(), self.targets.iter().map(|v| v - self.offset));
        let n = self.targets.len() as f64;
        -0.5 * f.dot(&self.alpha)
            - self.chol.diagonal().iter().map(|d| d.ln()).sum::<f64>()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }
}

/// Fits a zero-mean GP to `(x, f)`.
pub fn gpr_fit(x: &[f64], f: &[f64], hyper: GprHyper) -> Result<GprModel> {
    gpr_fit_with_offset(x, f, hyper, 0.0)
}

/// Fits a GP whose prior mean is the constant `offset`.
pub fn gpr_fit_with_offset(x: &[f64], f: &[f64], hyper: GprHyper, offset: f64) -> Result<GprModel> {
    hyper.validate()?;
    if x.len() != f.len() {
        return Err(Error::SizeMismatch { expected: x.len(), got: f.len() });
    }
    if x.is_empty() {
        return Err(Error::Empty("GPR training set"));
    }
    let (chol, jitter) = factorize(x, &hyper)?;
    let centered = DVector::from_iterator(f.len(), f.iter().map(|v| v - offset));
    let y = chol.solve_lower_triangular(&centered).expect("nonzero pivots");
    let alpha = chol.transpose().solve_upper_triangular(&y).expect("nonzero pivots");
    Ok(GprModel { inputs: x.to_vec(), targets: f.to_vec(), hyper, offset, jitter, chol, alpha })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprPrediction {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Posterior mean and (latent, noise-free) variance at `x_star`.
/// Variances are clamped at zero.
pub fn gpr_predict(model: &GprModel, x_star: &[f64]) -> GprPrediction {
    let raw = gpr_predict_unclamped(model, x_star);
    GprPrediction { mean: raw.mean, variance: raw.variance.into_iter().map(|v| v.max(0.0)).collect() }
}

/// As [`gpr_predict`] without the variance clamp.
pub fn gpr_predict_unclamped(model: &GprModel, x_star: &[f64]) -> GprPrediction {
    let n = model.inputs.len();
    let mut mean = Vec::with_capacity(x_star.len());
    let mut variance = Vec::with_capacity(x_star.len());
    for &xs in x_star {
        let k_star = DVector::from_iterator(n, model.inputs.iter().map(|&xi| se_kernel(xi, xs, &model.hyper)));
        mean.push(k_star.dot(&model.alpha) + model.offset);
        let v = model.chol.solve_lower_triangular(&k_star).expect("nonzero pivots");
        variance.push(se_kernel(xs, xs, &model.hyper) - v.norm_squared());
    }
    GprPrediction { mean, variance }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let mut out: Vec<f64> = (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect();
    out[0] = lo;
    out[n - 1] = hi;
    out
}

/// The fixed hyperparameter search grid: lengthscale outermost, noise
/// innermost.
pub fn hyper_grid() -> Vec<GprHyper> {
    let mut out = Vec::with_capacity(7 * 7 * 5);
    for &l in &log_grid(0.01, 1.0, 7) {
        for &sf in &log_grid(1e-6, 1e-2, 7) {
            for &sn in &log_grid(1e-10, 1e-4, 5) {
                out.push(GprHyper { lengthscale: l, signal_var: sf, noise_var: sn });
            }
        }
    }
    out
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Grid search for the hyperparameters maximizing the log marginal
/// likelihood of the mean-centered targets. The first grid point wins ties;
/// grid points whose factorization fails are skipped.
pub fn optimize_hyper(x: &[f64], f: &[f64]) -> Result<GprHyper> {
    if x.len() != f.len() {
        return Err(Error::SizeMismatch { expected: x.len(), got: f.len() });
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("hyperparameter search needs ≥ 3 points, got {}", x.len())));
    }
    let m = mean(f);
    best_on_grid(|h| gpr_fit_with_offset(x, f, h, m).map(|model| model.log_marginal_likelihood()))
}

fn best_on_grid(mut score: impl FnMut(GprHyper) -> Result<f64>) -> Result<GprHyper> {
    let mut best: Option<(f64, GprHyper)> = None;
    let mut last_err = None;
    for h in hyper_grid() {
        match score(h) {
            Ok(lml) if lml.is_finite() => {
                if best.map_or(true, |(b, _)| lml > b) {
                    best = Some((lml, h));
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    best.map(|(_, h)| h).ok_or_else(|| last_err.unwrap_or(Error::NotPositiveDefinite { jitter: f64::NAN }))
}

/// GP over several target series observed at the same inputs, pooled as
/// one data set.
///
/// With shared inputs the pooled posterior equals the posterior of the
/// per-input mean series under noise σn²/m, which keeps the factorization
/// at the size of one series.
#[derive(Debug, Clone)]
pub struct PooledGpr {
    pub model: GprModel,
    pub series_count: usize,
}

fn series_mean(series: &[Vec<f64>]) -> Vec<f64> {
    let n = series[0].len();
    (0..n).map(|i| series.iter().map(|s| s[i]).sum::<f64>() / series.len() as f64).collect()
}

fn check_series(x: &[f64], series: &[Vec<f64>]) -> Result<()> {
    if series.is_empty() {
        return Err(Error::Empty("pooled GPR series"));
    }
    for s in series {
        if s.len() != x.len() {
            return Err(Error::SizeMismatch { expected: x.len(), got: s.len() });
        }
    }
    Ok(())
}

pub fn gpr_fit_pooled(x: &[f64], series: &[Vec<f64>], hyper: GprHyper, offset: f64) -> Result<PooledGpr> {
    check_series(x, series)?;
    let m = series.len();
    let reduced = GprHyper { noise_var: hyper.noise_var / m as f64, ..hyper };
    let model = gpr_fit_with_offset(x, &series_mean(series), reduced, offset)?;
    Ok(PooledGpr { model, series_count: m })
}

impl PooledGpr {
    /// Log marginal likelihood of the full pooled data set.
    pub fn log_marginal_likelihood(&self, series: &[Vec<f64>]) -> f64 {
        let m = self.series_count as f64;
        let n = self.model.inputs.len() as f64;
        let mut lml = self.model.log_marginal_likelihood() - 0.5 * n * m.ln();
        if self.series_count > 1 {
            let noise = self.model.hyper.noise_var * m;
            let avg = self.model.targets();
            let scatter: f64 = series
                .iter()
                .map(|s| s.iter().zip(avg).map(|(v, a)| (v - a) * (v - a)).sum::<f64>())
                .sum();
            lml += -0.5 * scatter / noise - 0.5 * n * (m - 1.0) * (2.0 * std::f64::consts::PI * noise).ln();
        }
        lml
    }
}

/// Hyperparameter grid search for the pooled model (exact pooled
/// likelihood, mean-centered over all series).
pub fn optimize_hyper_pooled(x: &[f64], series: &[Vec<f64>]) -> Result<GprHyper> {
    check_series(x, series)?;
    if x.len() < 3 {
        return Err(Error::InsufficientData(format!("hyperparameter search needs ≥ 3 points, got {}", x.len())));
    }
    let offset = mean(&series_mean(series));
    best_on_grid(|h| gpr_fit_pooled(x, series, h, offset).map(|p| p.log_marginal_likelihood(series)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredFitConfig {
    /// Number of evaluation points on the output grid.
    pub grid_n: usize,
    /// Training points taken from each registered demo (evenly spaced).
    pub train_points: usize,
    /// Fixed hyperparameters; `None` runs the grid search per dimension.
    pub hyper: Option<GprHyper>,
}

impl Default for DesiredFitConfig {
    fn default() -> Self {
        Self { grid_n: 200, train_points: 200, hyper: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReference {
    pub arm: Arm,
    pub mean: Vec<Vector3<f64>>,
    pub variance: Vec<Vector3<f64>>,
    pub hyper: [GprHyper; 3],
}

/// Desired positional trajectory of both arms with pointwise variance,
/// over a normalized-time grid in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredTrajectory {
    pub grid: Vec<f64>,
    /// Duration of the reference demonstration, seconds.
    pub duration: f64,
    pub arms: Vec<ArmReference>,
}

impl DesiredTrajectory {
    pub fn arm(&self, arm: Arm) -> Option<&ArmReference> {
        self.arms.iter().find(|a| a.arm == arm)
    }
}

/// Evenly spaced indices `0..len` of size `min(count, len)`, endpoints kept.
pub fn even_indices(len: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, len);
    if count == 1 {
        return vec![0];
    }
    (0..count).map(|k| ((k * (len - 1)) as f64 / (count - 1) as f64).round() as usize).collect()
}

/// Uniform grid of `n` points over [0, 1].
pub fn unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// Fits one pooled GP per arm and spatial dimension on (normalized time,
/// coordinate) over all registered demos.
pub fn fit_desired_trajectory(sets: &[RegisteredDemoSet], cfg: &DesiredFitConfig) -> Result<DesiredTrajectory> {
    if sets.is_empty() {
        return Err(Error::Empty("registered demo sets"));
    }
    if cfg.grid_n < 2 {
        return Err(Error::InvalidConfig("desired trajectory grid needs at least 2 points".into()));
    }
    let grid = unit_grid(cfg.grid_n);
    let mut arms = Vec::with_capacity(sets.len());
    let mut duration = 0.0;
    for set in sets {
        if set.demos.is_empty() {
            return Err(Error::Empty("registered demo set"));
        }
        let len = set.sample_count();
        duration = set.demos[set.reference_index].duration();
        let idx = even_indices(len, cfg.train_points);
        let x: Vec<f64> = idx.iter().map(|&i| if len > 1 { i as f64 / (len - 1) as f64 } else { 0.0 }).collect();
        let mut mean_out = vec![Vector3::zeros(); grid.len()];
        let mut var_out = vec![Vector3::zeros(); grid.len()];
        let mut hypers = [GprHyper { lengthscale: 1.0, signal_var: 1.0, noise_var: 0.0 }; 3];
        for dim in 0..3 {
            let series: Vec<Vec<f64>> =
                set.demos.iter().map(|d| idx.iter().map(|&i| d.samples()[i].p[dim]).collect()).collect();
            let hyper = match cfg.hyper {
                Some(h) => h,
                None => optimize_hyper_pooled(&x, &series)?,
            };
            let offset = mean(&series_mean(&series));
            let pooled = gpr_fit_pooled(&x, &series, hyper, offset)?;
            let pred = gpr_predict(&pooled.model, &grid);
            for g in 0..grid.len() {
                mean_out[g][dim] = pred.mean[g];
                var_out[g][dim] = pred.variance[g];
            }
            hypers[dim] = hyper;
        }
        arms.push(ArmReference { arm: set.arm, mean: mean_out, variance: var_out, hyper: hypers });
    }
    Ok(DesiredTrajectory { grid, duration, arms })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::RigidTransform;
    use crate::trajectory::Trajectory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn hyp(l: f64, sf: f64, sn: f64) -> GprHyper {
        GprHyper::new(l, sf, sn).unwrap()
    }

    /// Dense inverse by Gauss-Jordan elimination with partial pivoting.
    fn gauss_jordan_inverse(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for c in 0..n {
            let p = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).unwrap();
            m.swap(c, p);
            let piv = m[c][c];
            for v in m[c].iter_mut() {
                *v /= piv;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    if f != 0.0 {
                        for k in 0..2 * n {
                            m[r][k] -= f * m[c][k];
                        }
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn dense_oracle(x: &[f64], f: &[f64], h: &GprHyper, xs: f64) -> (f64, f64) {
        let n = x.len();
        let k: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| se_kernel(x[i], x[j], h) + if i == j { h.noise_var } else { 0.0 }).collect())
            .collect();
        let inv = gauss_jordan_inverse(&k);
        let ks: Vec<f64> = x.iter().map(|&xi| se_kernel(xi, xs, h)).collect();
        let mut mean = 0.0;
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                mean += ks[i] * inv[i][j] * f[j];
                quad += ks[i] * inv[i][j] * ks[j];
            }
        }
        (mean, se_kernel(xs, xs, h) - quad)
    }

    #[test]
    fn kernel_values() {
        let h = hyp(1.0, 1.0, 0.0);
        assert_eq!(se_kernel(0.3, 0.3, &hyp(0.2, 2.5, 0.0)), 2.5);
        assert!((se_kernel(0.0, 1.0, &h) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((se_kernel(0.0, 1.0, &h) - 0.60653).abs() < 1e-5);
        assert_eq!(se_kernel(0.1, 0.7, &h), se_kernel(0.7, 0.1, &h));
    }

    #[test]
    fn invalid_hyper_rejected() {
        assert!(GprHyper::new(0.0, 1.0, 0.0).is_err());
        assert!(GprHyper::new(1.0, -1.0, 0.0).is_err());
        assert!(GprHyper::new(1.0, 1.0, -1e-3).is_err());
        assert!(GprHyper::new(f64::NAN, 1.0, 0.0).is_err());
    }

    #[test]
    fn single_point_posterior() {
        let h = hyp(0.1, 1.0, 1e-6);
        let m = gpr_fit(&[0.5], &[1.0], h).unwrap();
        let p = gpr_predict(&m, &[0.5]);
        assert!((p.mean[0] - 1.0).abs() < 1e-5);
        // σf²σn²/(σf²+σn²)
        let expected = 1e-6 / (1.0 + 1e-6);
        assert!((p.variance[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn duplicate_inputs_need_jitter() {
        let h = hyp(0.3, 1.0, 0.0);
        assert!(cholesky(gram(&[0.2, 0.2], &h)).is_none());
        let m = gpr_fit(&[0.2, 0.2], &[1.0, 1.0], h).unwrap();
        assert_eq!(m.jitter(), 1e-10);
    }

    #[test]
    fn matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
        let f: Vec<f64> = x.iter().map(|v| (6.0 * v).sin() + 0.1 * rng.random::<f64>()).collect();
        let h = hyp(0.2, 1.0, 1e-2);
        let m = gpr_fit(&x, &f, h).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let p = gpr_predict_unclamped(&m, &xs);
        for (i, &q) in xs.iter().enumerate() {
            let (mo, vo) = dense_oracle(&x, &f, &h, q);
            assert!((p.mean[i] - mo).abs() < 1e-8, "mean {} vs {}", p.mean[i], mo);
            assert!((p.variance[i] - vo).abs() < 1e-8);
        }
    }

    #[test]
    fn two_point_hand_solve() {
        let h = hyp(1.0, 1.0, 0.0);
        let m = gpr_fit(&[0.0, 1.0], &[0.0, 1.0], h).unwrap();
        // K = [[1, e], [e, 1]] with e = exp(-1/2); k* = [e', e'] with e' = exp(-1/8)
        let e = (-0.5f64).exp();
        let ks = (-0.125f64).exp();
        let det = 1.0 - e * e;
        let alpha = [(0.0 - e * 1.0) / det, (1.0 - e * 0.0) / det];
        let expected = ks * alpha[0] + ks * alpha[1];
        let p = gpr_predict(&m, &[0.5]);
        assert!((p.mean[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn noiseless_interpolation_and_prior_reversion() {
        let x = [0.1, 0.4, 0.6, 0.9];
        let f = [0.3, -0.2, 0.5, 0.1];
        let h = hyp(0.2, 0.5, 0.0);
        let m = gpr_fit(&x, &f, h).unwrap();
        let p = gpr_predict(&m, &x);
        for i in 0..4 {
            assert!((p.mean[i] - f[i]).abs() < 1e-8);
            assert!(p.variance[i].abs() < 1e-8);
        }
        let far = gpr_predict(&m, &[0.9 + 10.0 * 0.2 + 1.0]);
        assert!(far.mean[0].abs() < 1e-6);
        assert!((far.variance[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn optimize_requires_three_points() {
        assert!(matches!(optimize_hyper(&[0.0, 1.0], &[0.0, 1.0]), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn constant_targets_select_smallest_signal_variance() {
        let x: Vec<f64> = unit_grid(20);
        let h = optimize_hyper(&x, &vec![0.02; 20]).unwrap();
        assert_eq!(h.signal_var, 1e-6);
    }

    fn sample_gp(x: &[f64], h: &GprHyper, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = x.len();
        let mut k = gram(x, h);
        for i in 0..n {
            k[(i, i)] += h.noise_var + 1e-12;
        }
        let l = cholesky(k).unwrap();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        (l * z).iter().copied().collect()
    }

    #[test]
    fn recovers_known_lengthscale() {
        let grid = log_grid(0.01, 1.0, 7);
        let truth = hyp(0.1, 1e-4, 1e-7);
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut x: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
            x.sort_by(f64::total_cmp);
            let f = sample_gp(&x, &truth, &mut rng);
            let h = optimize_hyper(&x, &f).unwrap();
            let pos = grid.iter().position(|&g| g == h.lengthscale).unwrap();
            assert!((2..=4).contains(&pos), "seed {seed}: lengthscale {}", h.lengthscale);
        }
    }

    #[test]
    fn pooled_equals_direct_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = unit_grid(12);
        let series: Vec<Vec<f64>> = (0..3)
            .map(|_| x.iter().map(|v| (4.0 * v).cos() + 0.05 * rng.random::<f64>()).collect())
            .collect();
        let h = hyp(0.3, 0.8, 1e-3);
        let pooled = gpr_fit_pooled(&x, &series, h, 0.2).unwrap();
        let xs: Vec<f64> = series.iter().flat_map(|_| x.iter().copied()).collect();
        let fs: Vec<f64> = series.iter().flatten().copied().collect();
        let direct = gpr_fit_with_offset(&xs, &fs, h, 0.2).unwrap();
        let q = [0.05, 0.33, 0.71];
        let a = gpr_predict(&pooled.model, &q);
        let b = gpr_predict(&direct, &q);
        for i in 0..3 {
            assert!((a.mean[i] - b.mean[i]).abs() < 1e-9);
            assert!((a.variance[i] - b.variance[i]).abs() < 1e-9);
        }
        let lml = pooled.log_marginal_likelihood(&series);
        assert!((lml - direct.log_marginal_likelihood()).abs() < 1e-6 * lml.abs().max(1.0), "{lml} vs {}", direct.log_marginal_likelihood());
    }

    fn registered(demos: Vec<Trajectory>) -> RegisteredDemoSet {
        let n = demos.len();
        RegisteredDemoSet {
            arm: demos[0].arm(),
            reference_index: 0,
            demos,
            transforms: vec![RigidTransform::identity(); n],
            warp_costs: vec![0.0; n],
        }
    }

    fn curve(sign: f64, n: usize) -> Trajectory {
        let p: Vec<_> = (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                Vector3::new(sign * 0.01 * (5.0 * s).sin(), sign * 0.02 * s, sign * 0.005 * (3.0 * s).cos())
            })
            .collect();
        Trajectory::from_positions(Arm::Right, &p, 0.1).unwrap()
    }

    #[test]
    fn desired_interpolates_single_demo() {
        let demo = curve(1.0, 15);
        let cfg = DesiredFitConfig { grid_n: 15, train_points: 15, hyper: Some(hyp(0.2, 1e-4, 0.0)) };
        let d = fit_desired_trajectory(&[registered(vec![demo.clone()])], &cfg).unwrap();
        for (g, s) in d.arms[0].mean.iter().zip(demo.samples()) {
            assert!((g - s.p).norm() < 1e-8);
        }
    }

    #[test]
    fn desired_of_mirrored_demos_is_zero() {
        let cfg = DesiredFitConfig { grid_n: 40, train_points: 20, hyper: Some(hyp(0.2, 1e-4, 1e-8)) };
        let d = fit_desired_trajectory(&[registered(vec![curve(1.0, 20), curve(-1.0, 20)])], &cfg).unwrap();
        assert!(d.arms[0].mean.iter().all(|m| m.norm() < 1e-12));
    }

    #[test]
    fn more_identical_demos_shrink_variance() {
        let cfg = DesiredFitConfig { grid_n: 20, train_points: 20, hyper: Some(hyp(0.2, 1e-4, 1e-9)) };
        let demo = curve(1.0, 20);
        let one = fit_desired_trajectory(&[registered(vec![demo.clone()])], &cfg).unwrap();
        let five = fit_desired_trajectory(&[registered(vec![demo.clone(); 5])], &cfg).unwrap();
        for g in 0..20 {
            let err = (five.arms[0].mean[g] - demo.samples()[g].p).norm();
            assert!(err < 1e-5, "g={g} err={err}");
            for dim in 0..3 {
                let (v5, v1) = (five.arms[0].variance[g][dim], one.arms[0].variance[g][dim]);
                assert!(v5 <= v1 + 1e-15, "g={g} {v5} vs {v1}");
            }
        }
    }
}
