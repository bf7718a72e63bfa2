//! Trajectory and point-cloud evaluation.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

use crate::camera::{Intrinsics, Pixel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::residuals::DepthMap;
use crate::se3::Pose;

/// Default timestamp association window, seconds.
pub const DEFAULT_MAX_GAP: f64 = 0.02;
/// Default clipping distance for cloud metrics, meters.
pub const DEFAULT_CLIP: f64 = 0.5;

/// Timestamped world-to-camera poses with strictly increasing stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    stamps: Vec<f64>,
    poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(stamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if stamps.len() != poses.len() {
            return Err(Error::Config("trajectory stamps and poses differ in length".into()));
        }
        if stamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("trajectory timestamps must be strictly increasing".into()));
        }
        Ok(Self { stamps, poses })
    }

    /// Poses stamped `0, dt, 2 dt, ...`.
    pub fn uniform(poses: Vec<Pose>, dt: f64) -> Self {
        let stamps = (0..poses.len()).map(|i| i as f64 * dt).collect();
        Self { stamps, poses }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn stamps(&self) -> &[f64] {
        &self.stamps
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &Pose)> {
        self.stamps.iter().copied().zip(&self.poses)
    }

    /// Index of the stamp nearest to `t`.
    fn nearest(&self, t: f64) -> Option<usize> {
        if self.stamps.is_empty() {
            return None;
        }
        let i = self.stamps.partition_point(|&s| s < t);
        let mut best = i.min(self.stamps.len() - 1);
        if i > 0 && (t - self.stamps[i - 1]).abs() <= (self.stamps[best] - t).abs() {
            best = i - 1;
        }
        Some(best)
    }
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }
}

/// Pairs `(est, gt)` of nearest stamps within `max_gap`.
pub fn associate(est: &Trajectory, gt: &Trajectory, max_gap: f64) -> Vec<(usize, usize)> {
    est.stamps
        .iter()
        .enumerate()
        .filter_map(|(i, &t)| {
            let j = gt.nearest(t)?;
            ((gt.stamps[j] - t).abs() <= max_gap).then_some((i, j))
        })
        .collect()
}

/// Closed-form least-squares alignment of point pairs `(from, to)`.
pub fn umeyama(from: &[Vector3<f64>], to: &[Vector3<f64>], with_scale: bool) -> Result<Similarity> {
    let n = from.len();
    if n < 3 || to.len() != n {
        return Err(Error::TooFewPairs(n.min(to.len())));
    }
    let nf = n as f64;
    let mx = from.iter().sum::<Vector3<f64>>() / nf;
    let my = to.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (x, y) in from.iter().zip(to) {
        cov += (y - my) * (x - mx).transpose();
        var += (x - mx).norm_squared();
    }
    cov /= nf;
    var /= nf;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut s = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * vt;
    let scale = if with_scale && var > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var
    } else {
        1.0
    };
    Ok(Similarity {
        rotation,
        translation: my - rotation * mx * scale,
        scale,
    })
}

/// Transform mapping the estimated camera centers onto the ground truth.
pub fn align(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Similarity> {
    align_with_gap(est, gt, with_scale, DEFAULT_MAX_GAP)
}

pub fn align_with_gap(est: &Trajectory, gt: &Trajectory, with_scale: bool, max_gap: f64) -> Result<Similarity> {
    let (from, to) = paired_centers(est, gt, max_gap);
    umeyama(&from, &to, with_scale)
}

fn paired_centers(est: &Trajectory, gt: &Trajectory, max_gap: f64) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    associate(est, gt, max_gap)
        .into_iter()
        .map(|(i, j)| (est.poses[i].center(), gt.poses[j].center()))
        .unzip()
}

/// Alignment that also uses camera orientations: the rotation is the
/// chordal mean of the per-pose rotation offsets, then scale and translation
/// fit the centers. Unlike [`align`] it stays well posed when the centers are
/// nearly collinear, so it is the one to use for mapping reconstructions.
pub fn align_poses(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<Similarity> {
    let pairs = associate(est, gt, DEFAULT_MAX_GAP);
    if pairs.len() < 3 {
        return Err(Error::TooFewPairs(pairs.len()));
    }
    let mut m = Matrix3::zeros();
    for &(i, j) in &pairs {
        m += gt.poses[j].rotation.transpose() * est.poses[i].rotation;
    }
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let mut d = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * vt;
    let (from, to): (Vec<_>, Vec<_>) = pairs
        .iter()
        .map(|&(i, j)| (est.poses[i].center(), gt.poses[j].center()))
        .unzip();
    let nf = from.len() as f64;
    let mx = from.iter().sum::<Vector3<f64>>() / nf;
    let my = to.iter().sum::<Vector3<f64>>() / nf;
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in from.iter().zip(&to) {
        num += (rotation * (x - mx)).dot(&(y - my));
        den += (x - mx).norm_squared();
    }
    let scale = if with_scale && den > 0.0 && num > 0.0 { num / den } else { 1.0 };
    Ok(Similarity {
        rotation,
        translation: my - rotation * mx * scale,
        scale,
    })
}

/// Translation error of every associated pose after alignment.
pub fn translation_errors(est: &Trajectory, gt: &Trajectory, with_scale: bool, max_gap: f64) -> Result<Vec<f64>> {
    let (from, to) = paired_centers(est, gt, max_gap);
    let s = umeyama(&from, &to, with_scale)?;
    Ok(from.iter().zip(&to).map(|(x, y)| (s.apply(x) - y).norm()).collect())
}

/// Root-mean-square translation error after alignment, meters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, with_scale: bool) -> Result<f64> {
    let e = translation_errors(est, gt, with_scale, DEFAULT_MAX_GAP)?;
    Ok((e.iter().map(|x| x * x).sum::<f64>() / e.len() as f64).sqrt())
}

/// `count` uniform thresholds in `(0, max]`.
pub fn uniform_thresholds(max: f64, count: usize) -> Vec<f64> {
    (1..=count).map(|k| max * k as f64 / count as f64).collect()
}

/// 128 thresholds in `(0, 0.5]` meters.
pub fn default_thresholds() -> Vec<f64> {
    uniform_thresholds(0.5, 128)
}

/// Area under the success-rate curve over `thresholds`, scaled to `[0, 100]`.
pub fn auc(errors: &[f64], thresholds: &[f64]) -> f64 {
    if errors.is_empty() || thresholds.is_empty() {
        return 0.0;
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let sum: f64 = thresholds
        .iter()
        .map(|&t| sorted.partition_point(|&e| e <= t) as f64 / n)
        .sum();
    100.0 * sum / thresholds.len() as f64
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|x| x.is_finite()))
    }

    pub fn transformed(&self, s: &Similarity) -> PointCloud {
        PointCloud::new(self.points.iter().map(|p| s.apply(p)).collect())
    }

    pub fn extend(&mut self, other: PointCloud) {
        self.points.extend(other.points);
    }
}

/// World-frame points of the pixels selected by `mask`.
pub fn depth_cloud(pose: &Pose, depth: &DepthMap, k: &Intrinsics, mask: Option<&Grid<bool>>) -> PointCloud {
    let inv = pose.inverse();
    let points = (0..depth.values.len())
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .map(|i| inv.transform_point(&(k.ray(&Pixel::of_index(i, k.width)) * depth.values[i])))
        .collect();
    PointCloud::new(points)
}

/// Static kd-tree over 3-D points for exact nearest-neighbor queries.
#[derive(Debug, Clone)]
pub struct KdTree {
    points: Vec<Vector3<f64>>,
    nodes: Vec<KdNode>,
}

#[derive(Debug, Clone, Copy)]
enum KdNode {
    Leaf { start: usize, end: usize },
    Split { axis: usize, value: f64, left: usize, right: usize },
}

const LEAF_SIZE: usize = 8;

impl KdTree {
    pub fn new(points: &[Vector3<f64>]) -> Self {
        let mut tree = KdTree {
            points: points.to_vec(),
            nodes: Vec::new(),
        };
        if !points.is_empty() {
            let n = tree.points.len();
            tree.build(0, n);
        }
        tree
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(KdNode::Leaf { start, end });
            return id;
        }
        let slice = &mut self.points[start..end];
        let (lo, hi) = slice.iter().fold(
            (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY)),
            |(lo, hi), p| (lo.inf(p), hi.sup(p)),
        );
        let axis = (hi - lo).imax();
        let mid = slice.len() / 2;
        slice.select_nth_unstable_by(mid, |a, b| a[axis].total_cmp(&b[axis]));
        let value = slice[mid][axis];
        self.nodes.push(KdNode::Leaf { start: 0, end: 0 });
        let left = self.build(start, start + mid);
        let right = self.build(start + mid, end);
        self.nodes[id] = KdNode::Split { axis, value, left, right };
        id
    }

    /// Distance to the nearest stored point; infinite for an empty tree.
    pub fn nearest_distance(&self, q: &Vector3<f64>) -> f64 {
        if self.nodes.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        self.search(0, q, &mut best);
        best.sqrt()
    }

    fn search(&self, node: usize, q: &Vector3<f64>, best: &mut f64) {
        match self.nodes[node] {
            KdNode::Leaf { start, end } => {
                for p in &self.points[start..end] {
                    *best = best.min((p - q).norm_squared());
                }
            }
            KdNode::Split { axis, value, left, right } => {
                let d = q[axis] - value;
                let (near, far) = if d < 0.0 { (left, right) } else { (right, left) };
                self.search(near, q, best);
                if d * d < *best {
                    self.search(far, q, best);
                }
            }
        }
    }
}

/// Brute-force nearest distance, the reference for [`KdTree`].
pub fn brute_force_nearest(points: &[Vector3<f64>], q: &Vector3<f64>) -> f64 {
    points
        .iter()
        .map(|p| (p - q).norm_squared())
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudMetrics {
    pub accuracy: f64,
    pub completion: f64,
    pub chamfer: f64,
}

fn mean_clipped(from: &[Vector3<f64>], tree: &KdTree, clip: f64) -> f64 {
    let d: Vec<f64> = from.par_iter().map(|p| tree.nearest_distance(p).min(clip)).collect();
    d.iter().sum::<f64>() / d.len() as f64
}

/// Clipped accuracy, completion and their mean.
pub fn cloud_metrics(est: &PointCloud, gt: &PointCloud, clip: f64) -> Result<CloudMetrics> {
    if est.is_empty() || gt.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let accuracy = mean_clipped(&est.points, &KdTree::new(&gt.points), clip);
    let completion = mean_clipped(&gt.points, &KdTree::new(&est.points), clip);
    Ok(CloudMetrics {
        accuracy,
        completion,
        chamfer: 0.5 * (accuracy + completion),
    })
}

/// Mean `|s * d_est - d_gt| / d_gt` over pixels selected by `mask`.
pub fn mean_relative_depth_error(est: &DepthMap, gt: &DepthMap, scale: f64, mask: Option<&Grid<bool>>) -> f64 {
    let (sum, n) = est
        .values
        .iter()
        .zip(gt.values.iter())
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .fold((0.0, 0usize), |(s, n), (_, (&e, &g))| (s + (scale * e - g).abs() / g, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
