//! Spatial (ICP) and temporal (DTW) registration of demonstration
//! trajectories onto a common reference.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{Arm, ToolSample, Trajectory};

/// Proper rigid transform `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Geodesic angle between the two rotations, radians.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        (0.5 * skew.norm()).atan2(0.5 * (rel.trace() - 1.0))
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let ortho = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        ortho <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Least-squares rigid fit `Q ≈ R·P + t` through the SVD of the
/// cross-covariance, with the reflection case excluded.
pub fn kabsch_rotation(p: &[Vector3<f64>], q: &[Vector3<f64>]) -> Result<RigidTransform> {
    if p.len() != q.len() {
        return Err(Error::SizeMismatch { expected: p.len(), got: q.len() });
    }
    if p.len() < 3 {
        return Err(Error::DegenerateGeometry(format!("need at least 3 points, got {}", p.len())));
    }
    let n = p.len() as f64;
    let cp = p.iter().sum::<Vector3<f64>>() / n;
    let cq = q.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in p.iter().zip(q) {
        h += (a - cp) * (b - cq).transpose();
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    let (mut u, mut v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    // sort singular values descending so the sign fix hits the weakest direction
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let (u0, v0, s0) = (u, v_t, sv);
    for (k, &i) in order.iter().enumerate() {
        u.set_column(k, &u0.column(i));
        v_t.set_row(k, &v0.row(i));
        sv[k] = s0[i];
    }
    let scale = sv[0].max(f64::MIN_POSITIVE);
    if sv[0] <= 1e-300 || sv[1] <= 1e-12 * scale {
        return Err(Error::DegenerateGeometry(
            "cross-covariance has rank < 2 (points coincident or collinear)".into(),
        ));
    }
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let correction = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d));
    let rotation = v * correction * u.transpose();
    let translation = cq - rotation * cp;
    Ok(RigidTransform { rotation, translation })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iter: usize,
    /// Stop once the RMSE improves by less than this (meters).
    pub tol: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub residual_history: Vec<f64>,
}

/// Closest point to `q` on the polyline through `target`.
fn closest_on_polyline(q: &Vector3<f64>, target: &[Vector3<f64>]) -> (Vector3<f64>, f64) {
    if target.len() == 1 {
        return (target[0], (target[0] - q).norm_squared());
    }
    let mut best = (target[0], f64::INFINITY);
    for w in target.windows(2) {
        let d = w[1] - w[0];
        let len2 = d.norm_squared();
        let u = if len2 > 0.0 { ((q - w[0]).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let c = w[0] + d * u;
        let e = (c - q).norm_squared();
        if e < best.1 {
            best = (c, e);
        }
    }
    best
}

// Matching against samples alone leaves spurious fixed points where part
// of a smooth curve pairs one sample ahead; the polyline removes them.
fn nearest_matches(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    tf: &RigidTransform,
) -> (Vec<Vector3<f64>>, f64) {
    let mut sq = 0.0;
    let matches = source
        .iter()
        .map(|s| {
            let (c, e) = closest_on_polyline(&tf.apply(s), target);
            sq += e;
            c
        })
        .collect();
    (matches, (sq / source.len() as f64).sqrt())
}

/// ICP on tool positions, matching each source point to the nearest point
/// of the target path (the polyline through its samples, in order). The
/// returned transform maps the source trajectory onto the target.
pub fn icp_align(source: &Trajectory, target: &Trajectory, cfg: &IcpConfig) -> Result<IcpResult> {
    icp_align_points(&source.positions(), &target.positions(), cfg)
}

pub fn icp_align_points(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::Empty("icp input"));
    }
    if cfg.max_iter == 0 {
        return Err(Error::InvalidConfig("icp max_iter must be at least 1".into()));
    }
    let cs = source.iter().sum::<Vector3<f64>>() / source.len() as f64;
    let ct = target.iter().sum::<Vector3<f64>>() / target.len() as f64;
    let mut transform = RigidTransform::new(Matrix3::identity(), ct - cs);
    let (mut matches, mut rmse) = nearest_matches(source, target, &transform);
    let mut residual_history = vec![rmse];
    for _ in 0..cfg.max_iter {
        let candidate = kabsch_rotation(source, &matches)?;
        let (next_matches, next_rmse) = nearest_matches(source, target, &candidate);
        if next_rmse > rmse {
            break;
        }
        let gain = rmse - next_rmse;
        transform = candidate;
        matches = next_matches;
        rmse = next_rmse;
        residual_history.push(rmse);
        if gain < cfg.tol {
            break;
        }
    }
    Ok(IcpResult { transform, residual_history })
}

/// Monotone, continuous alignment between two sequences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpPath {
    pub pairs: Vec<(usize, usize)>,
}

impl WarpPath {
    pub fn diagonal(n: usize) -> Self {
        Self { pairs: (0..n).map(|i| (i, i)).collect() }
    }

    /// Checks the path against sequence lengths `(n, m)`.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let first = self.pairs.first().ok_or_else(|| Error::InvalidPath("empty path".into()))?;
        if *first != (0, 0) {
            return Err(Error::InvalidPath(format!("starts at {first:?}")));
        }
        let last = self.pairs[self.pairs.len() - 1];
        if n == 0 || m == 0 || last != (n - 1, m - 1) {
            return Err(Error::InvalidPath(format!("ends at {last:?}, expected ({}, {})", n.max(1) - 1, m.max(1) - 1)));
        }
        for w in self.pairs.windows(2) {
            let di = w[1].0.checked_sub(w[0].0);
            let dj = w[1].1.checked_sub(w[0].1);
            match (di, dj) {
                (Some(0), Some(1)) | (Some(1), Some(0)) | (Some(1), Some(1)) => {}
                _ => return Err(Error::InvalidPath(format!("step {:?} -> {:?}", w[0], w[1]))),
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DtwAlignment {
    pub path: WarpPath,
    pub cost: f64,
}

/// Classic symmetric unit-step DTW under an arbitrary pointwise metric.
pub fn dtw_align<T>(a: &[T], b: &[T], metric: impl Fn(&T, &T) -> f64) -> Result<DtwAlignment> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw input"));
    }
    let (n, m) = (a.len(), b.len());
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let d = metric(&a[i], &b[j]);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = acc[(i - 1) * m + j - 1];
                }
                if i > 0 {
                    best = best.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    best = best.min(acc[i * m + j - 1]);
                }
                best
            };
            acc[i * m + j] = prev + d;
        }
    }
    let mut pairs = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        // prefer the diagonal, then advance along whichever sequence is cheaper
        let (ni, nj) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let diag = acc[(i - 1) * m + j - 1];
            let up = acc[(i - 1) * m + j];
            let left = acc[i * m + j - 1];
            if diag <= up && diag <= left {
                (i - 1, j - 1)
            } else if left <= up {
                (i, j - 1)
            } else {
                (i - 1, j)
            }
        };
        i = ni;
        j = nj;
        pairs.push((i, j));
    }
    pairs.reverse();
    Ok(DtwAlignment { path: WarpPath { pairs }, cost: acc[n * m - 1] })
}

/// DTW on 3D positions with Euclidean point distance.
pub fn dtw_positions(a: &[Vector3<f64>], b: &[Vector3<f64>]) -> Result<DtwAlignment> {
    dtw_align(a, b, |x, y| (x - y).norm())
}

/// Resamples `traj` onto the reference timeline given a warp path whose
/// pairs are `(traj index, reference index)`.
///
/// Several source samples landing on one reference index are merged: the
/// positions are averaged and the source orientation closest to the mean
/// orientation is kept, together with its grip state.
pub fn warp_to_reference(traj: &Trajectory, ref_times: &[f64], path: &WarpPath) -> Result<Trajectory> {
    path.validate(traj.len(), ref_times.len())?;
    let src = traj.samples();
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); ref_times.len()];
    for &(i, j) in &path.pairs {
        buckets[j].push(i);
    }
    let mut out = Vec::with_capacity(ref_times.len());
    for (j, idx) in buckets.iter().enumerate() {
        let count = idx.len() as f64;
        let p = idx.iter().map(|&i| src[i].p).sum::<Vector3<f64>>() / count;
        let anchor = src[idx[0]].q;
        let mut mean = nalgebra::Vector4::zeros();
        for &i in idx {
            let c = src[i].q.coords;
            let sign = if c.dot(&anchor.coords) < 0.0 { -1.0 } else { 1.0 };
            mean += c * sign;
        }
        let keep = idx
            .iter()
            .copied()
            .max_by(|&x, &y| {
                let dx = src[x].q.coords.dot(&mean).abs();
                let dy = src[y].q.coords.dot(&mean).abs();
                // prefer the earliest sample on ties
                dx.total_cmp(&dy).then(y.cmp(&x))
            })
            .expect("validated path covers every reference index");
        out.push(ToolSample::new(ref_times[j], p, src[keep].q, src[keep].grip));
    }
    Trajectory::new(traj.arm(), out)
}

/// Demonstrations of one arm aligned onto a common reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredDemoSet {
    pub arm: Arm,
    pub reference_index: usize,
    pub demos: Vec<Trajectory>,
    pub transforms: Vec<RigidTransform>,
    pub warp_costs: Vec<f64>,
}

impl RegisteredDemoSet {
    pub fn sample_count(&self) -> usize {
        self.demos[self.reference_index].len()
    }
}

/// Index minimizing the summed pairwise cost; ties go to the lowest index.
pub fn medoid_index(costs: &[Vec<f64>]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in costs.iter().enumerate() {
        let total: f64 = row.iter().sum();
        if total < best.0 {
            best = (total, i);
        }
    }
    best.1
}

/// Registers all demonstrations of one arm: picks the DTW medoid as the
/// reference, then ICP-aligns and DTW-warps every other demo onto it.
pub fn register_demos(demos: &[Trajectory], cfg: &IcpConfig) -> Result<RegisteredDemoSet> {
    let first = demos.first().ok_or(Error::Empty("demonstration set"))?;
    let arm = first.arm();
    if demos.iter().any(|d| d.arm() != arm) {
        return Err(Error::InvalidTrajectory("demos of mixed arms in one registration".into()));
    }
    let positions: Vec<Vec<Vector3<f64>>> = demos.iter().map(|d| d.positions()).collect();
    let n = demos.len();
    let mut costs = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let c = dtw_positions(&positions[i], &positions[j])?.cost;
            costs[i][j] = c;
            costs[j][i] = c;
        }
    }
    let reference_index = medoid_index(&costs);
    let reference = &demos[reference_index];
    let ref_times = reference.times();

    let mut out = Vec::with_capacity(n);
    let mut transforms = Vec::with_capacity(n);
    let mut warp_costs = Vec::with_capacity(n);
    for (k, demo) in demos.iter().enumerate() {
        if k == reference_index {
            out.push(reference.clone());
            transforms.push(RigidTransform::identity());
            warp_costs.push(0.0);
            continue;
        }
        let icp = icp_align(demo, reference, cfg)?;
        let tf = icp.transform;
        let rot = tf.unit_quaternion();
        let moved: Vec<ToolSample> = demo
            .samples()
            .iter()
            .map(|s| ToolSample::new(s.t, tf.apply(&s.p), rot * s.q, s.grip))
            .collect();
        let moved = Trajectory::new(arm, moved)?;
        let alignment = dtw_positions(&moved.positions(), &positions[reference_index])?;
        out.push(warp_to_reference(&moved, &ref_times, &alignment.path)?);
        transforms.push(tf);
        warp_costs.push(alignment.cost);
    }
    Ok(RegisteredDemoSet { arm, reference_index, demos: out, transforms, warp_costs })
}
