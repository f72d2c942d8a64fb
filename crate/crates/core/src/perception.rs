//! Goal localisation: scene keypoints are clustered with a Gaussian mixture
//! and the cluster centres are mapped from image pixels onto the board
//! plane through a homography.

use nalgebra::{DMatrix, Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeypointConfig {
    pub per_site: usize,
    /// Standard deviation of site keypoints, pixels.
    pub noise_px: f64,
    /// Uniform background points over the whole image.
    pub clutter: usize,
    pub width: f64,
    pub height: f64,
}

impl Default for KeypointConfig {
    fn default() -> Self {
        Self { per_site: 30, noise_px: 2.0, clutter: 10, width: 640.0, height: 480.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub points: Vec<Vector2<f64>>,
    pub seed: u64,
}

/// Synthetic detector output: Gaussian blobs around each site pixel plus
/// uniform clutter. Site points come first, site by site.
pub fn generate_keypoints(site_px: &[Vector2<f64>], cfg: &KeypointConfig, seed: u64) -> KeypointSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(site_px.len() * cfg.per_site + cfg.clutter);
    let noise = Normal::new(0.0, cfg.noise_px.max(0.0)).expect("finite σ");
    for s in site_px {
        for _ in 0..cfg.per_site {
            points.push(Vector2::new(s.x + noise.sample(&mut rng), s.y + noise.sample(&mut rng)));
        }
    }
    for _ in 0..cfg.clutter {
        points.push(Vector2::new(rng.random_range(0.0..cfg.width), rng.random_range(0.0..cfg.height)));
    }
    KeypointSet { points, seed }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Minimum covariance eigenvalue, px².
    pub cov_floor: f64,
    pub seed: u64,
    /// Independent seedings; the best final likelihood wins.
    pub restarts: usize,
}

impl Default for GmmConfig {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-8, cov_floor: 1.0, seed: 0, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vector2<f64>>,
    pub covariances: Vec<Matrix2<f64>>,
    pub log_likelihood_history: Vec<f64>,
}

impl GmmModel {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn log_likelihood(&self) -> f64 {
        *self.log_likelihood_history.last().unwrap_or(&f64::NEG_INFINITY)
    }
}

fn floor_cov(c: &Matrix2<f64>, floor: f64) -> Matrix2<f64> {
    let sym = (c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(floor));
    eig.eigenvectors * Matrix2::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn log_gauss(x: &Vector2<f64>, mu: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    let inv = cov.try_inverse().unwrap_or_else(Matrix2::identity);
    let d = x - mu;
    -0.5 * (d.dot(&(inv * d)) + det.ln()) - (2.0 * std::f64::consts::PI).ln()
}

/// k-means++ seeding: first centre uniformly, then proportional to the
/// squared distance to the nearest chosen centre.
fn seed_means(points: &[Vector2<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vector2<f64>> {
    let mut means = vec![points[rng.random_range(0..points.len())]];
    while means.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| means.iter().map(|m| (p - m).norm_squared()).fold(f64::INFINITY, f64::min)).collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        means.push(points[next]);
    }
    means
}

fn e_step(points: &[Vector2<f64>], m: &GmmModel, resp: &mut [Vec<f64>]) -> f64 {
    let mut ll = 0.0;
    for (i, x) in points.iter().enumerate() {
        let logs: Vec<f64> =
            (0..m.k()).map(|j| m.weights[j].max(1e-300).ln() + log_gauss(x, &m.means[j], &m.covariances[j])).collect();
        let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = logs.iter().map(|l| (l - mx).exp()).sum();
        let lse = mx + s.ln();
        ll += lse;
        for j in 0..m.k() {
            resp[i][j] = (logs[j] - lse).exp();
        }
    }
    ll
}

fn m_step(points: &[Vector2<f64>], resp: &[Vec<f64>], k: usize, floor: f64, prev: &GmmModel) -> GmmModel {
    let n = points.len() as f64;
    let mut out = prev.clone();
    for j in 0..k {
        let nj: f64 = resp.iter().map(|r| r[j]).sum();
        if nj <= 1e-12 {
            // empty component keeps its parameters with zero weight
            out.weights[j] = 0.0;
            continue;
        }
        let mu = points.iter().zip(resp).fold(Vector2::zeros(), |a, (x, r)| a + x * r[j]) / nj;
        let cov = points.iter().zip(resp).fold(Matrix2::zeros(), |a, (x, r)| {
            let d = x - mu;
            a + d * d.transpose() * r[j]
        }) / nj;
        out.weights[j] = nj / n;
        out.means[j] = mu;
        out.covariances[j] = floor_cov(&cov, floor);
    }
    let total: f64 = out.weights.iter().sum();
    out.weights.iter_mut().for_each(|w| *w /= total);
    out
}

fn em_once(points: &[Vector2<f64>], k: usize, cfg: &GmmConfig, rng: &mut ChaCha8Rng) -> GmmModel {
    let means = seed_means(points, k, rng);
    let mean = points.iter().sum::<Vector2<f64>>() / points.len() as f64;
    let global = points.iter().fold(Matrix2::zeros(), |a, x| a + (x - mean) * (x - mean).transpose()) / points.len() as f64;
    let start_cov = floor_cov(&global, cfg.cov_floor);
    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means,
        covariances: vec![start_cov; k],
        log_likelihood_history: Vec::new(),
    };
    let mut resp = vec![vec![0.0; k]; points.len()];
    let mut ll = e_step(points, &model, &mut resp);
    model.log_likelihood_history.push(ll);
    for _ in 0..cfg.max_iter {
        let mut next = m_step(points, &resp, k, cfg.cov_floor, &model);
        let mut next_resp = resp.clone();
        let next_ll = e_step(points, &next, &mut next_resp);
        if !(next_ll >= ll) {
            // rounding-level regression at convergence: keep the last model
            break;
        }
        next.log_likelihood_history.push(next_ll);
        let gain = next_ll - ll;
        model = next;
        resp = next_resp;
        ll = next_ll;
        if gain < cfg.tol {
            break;
        }
    }
    model
}

/// Expectation–maximisation with seeded k-means++ initialisation.
pub fn gmm_fit(points: &[Vector2<f64>], k: usize, cfg: &GmmConfig) -> Result<GmmModel> {
    if k == 0 {
        return Err(Error::InvalidConfig("GMM needs K ≥ 1".into()));
    }
    if points.len() < k {
        return Err(Error::InsufficientData(format!("{} points for {k} components", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<GmmModel> = None;
    for _ in 0..cfg.restarts.max(1) {
        let m = em_once(points, k, cfg, &mut rng);
        if best.as_ref().is_none_or(|b| m.log_likelihood() > b.log_likelihood()) {
            best = Some(m);
        }
    }
    Ok(best.unwrap())
}

/// Means ordered by decreasing weight, ties by increasing x.
pub fn cluster_centers(model: &GmmModel) -> Vec<Vector2<f64>> {
    let mut idx: Vec<usize> = (0..model.k()).collect();
    idx.sort_by(|&a, &b| {
        model.weights[b].total_cmp(&model.weights[a]).then(model.means[a].x.total_cmp(&model.means[b].x))
    });
    idx.into_iter().map(|j| model.means[j]).collect()
}

/// Image pixels → board millimetres, with the board lying at a fixed
/// world height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanarTransform {
    pub h: Matrix3<f64>,
    /// Board plane height in the world frame, metres.
    pub plane_height: f64,
}

impl PlanarTransform {
    pub fn new(h: Matrix3<f64>, plane_height: f64) -> Result<Self> {
        if !(h.determinant().abs() > 1e-12) || h[(2, 2)].abs() < 1e-15 {
            return Err(Error::DegenerateGeometry("homography is singular".into()));
        }
        Ok(Self { h: h / h[(2, 2)], plane_height })
    }

    /// Builds the image→board transform from a board→image camera map.
    pub fn from_projection(board_to_image: Matrix3<f64>, plane_height: f64) -> Result<Self> {
        let inv = board_to_image
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("projection is singular".into()))?;
        Self::new(inv, plane_height)
    }

    pub fn image_to_board(&self, px: &Vector2<f64>) -> Result<Vector2<f64>> {
        apply_h(&self.h, px)
    }

    /// Board point (metres in the world frame) back to pixels.
    pub fn world_to_image(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        let inv = self.h.try_inverse().ok_or_else(|| Error::DegenerateGeometry("singular homography".into()))?;
        apply_h(&inv, &Vector2::new(p.x * 1000.0, p.y * 1000.0))
    }
}

fn apply_h(h: &Matrix3<f64>, p: &Vector2<f64>) -> Result<Vector2<f64>> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    if v.z.abs() < 1e-9 {
        return Err(Error::AtInfinity(v.z));
    }
    Ok(Vector2::new(v.x / v.z, v.y / v.z))
}

pub fn image_to_world(tf: &PlanarTransform, px: &Vector2<f64>) -> Result<Vector3<f64>> {
    let b = tf.image_to_board(px)?;
    Ok(Vector3::new(b.x / 1000.0, b.y / 1000.0, tf.plane_height))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographyFit {
    pub transform: PlanarTransform,
    /// Reprojection error of the board points into the image, pixels.
    pub rmse_px: f64,
}

fn normalizer(pts: &[Vector2<f64>]) -> Matrix3<f64> {
    let c = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let mean_d = pts.iter().map(|p| (p - c).norm()).sum::<f64>() / pts.len() as f64;
    let s = if mean_d > 0.0 { std::f64::consts::SQRT_2 / mean_d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

fn collinear(a: &Vector2<f64>, b: &Vector2<f64>, c: &Vector2<f64>, scale: f64) -> bool {
    let cross = (b - a).perp(&(c - a));
    cross.abs() <= 1e-9 * scale * scale
}

fn check_spread(pts: &[Vector2<f64>]) -> Result<()> {
    let c = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let scale = pts.iter().map(|p| (p - c).norm()).fold(0.0, f64::max).max(1e-300);
    let cov = pts.iter().fold(Matrix2::zeros(), |a, p| a + (p - c) * (p - c).transpose());
    let eig = SymmetricEigen::new(cov).eigenvalues;
    if eig.min() <= 1e-12 * eig.max().max(1e-300) {
        return Err(Error::DegenerateGeometry("all correspondences collinear".into()));
    }
    if pts.len() == 4 {
        for i in 0..4 {
            let o: Vec<_> = (0..4).filter(|&j| j != i).map(|j| pts[j]).collect();
            if collinear(&o[0], &o[1], &o[2], scale) {
                return Err(Error::DegenerateGeometry("three of four correspondences collinear".into()));
            }
        }
    }
    Ok(())
}

/// Normalised direct linear transform from `(pixel, board mm)` pairs.
pub fn estimate_board_homography(pairs: &[(Vector2<f64>, Vector2<f64>)], plane_height: f64) -> Result<HomographyFit> {
    if pairs.len() < 4 {
        return Err(Error::DegenerateGeometry(format!("need ≥ 4 correspondences, got {}", pairs.len())));
    }
    let src: Vec<_> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<_> = pairs.iter().map(|p| p.1).collect();
    check_spread(&src)?;
    check_spread(&dst)?;
    let (ts, td) = (normalizer(&src), normalizer(&dst));
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = ts * Vector3::new(s.x, s.y, 1.0);
        let d = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y, u, v) = (s.x / s.z, s.y / s.z, d.x / d.z, d.y / d.z);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.ok_or_else(|| Error::DegenerateGeometry("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let (smallest, second) = (order[8], order[7]);
    if sv[second] <= 1e-10 * sv[order[0]] {
        return Err(Error::DegenerateGeometry("correspondences do not determine a unique homography".into()));
    }
    let hv = vt.row(smallest);
    let hn = Matrix3::new(hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], hv[8]);
    let td_inv = td.try_inverse().ok_or_else(|| Error::DegenerateGeometry("normaliser".into()))?;
    let transform = PlanarTransform::new(td_inv * hn * ts, plane_height)?;
    let inv = transform.h.try_inverse().ok_or_else(|| Error::DegenerateGeometry("singular homography".into()))?;
    let mut sq = 0.0;
    for (s, d) in &src.iter().zip(&dst).collect::<Vec<_>>() {
        let back = apply_h(&inv, d)?;
        sq += (back - *s).norm_squared();
    }
    Ok(HomographyFit { transform, rmse_px: (sq / pairs.len() as f64).sqrt() })
}

/// Centre nearest the nominal target; ties by lowest index.
pub fn select_goal(centers: &[Vector3<f64>], nominal: &Vector3<f64>) -> Result<Vector3<f64>> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for c in centers {
        let d = (c - nominal).norm();
        if best.is_none_or(|(bd, _)| d < bd) {
            best = Some((d, *c));
        }
    }
    best.map(|b| b.1).ok_or(Error::Empty("centers"))
}
