//! Normalized DLT and a seeded RANSAC wrapper.

use nalgebra::{DMatrix, Matrix3, Point2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::correspondence::{Correspondence, CorrespondenceSet, MIN_CORRESPONDENCES};
use super::AlignError;

/// Projective map `p1 ~ H·p0`, scaled so that `h33 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    matrix: Matrix3<f64>,
}

impl Homography {
    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self {
            matrix: Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0),
        }
    }

    /// Normalizes `h33` to one and checks invertibility.
    pub fn from_matrix(matrix: Matrix3<f64>) -> Result<Self, AlignError> {
        let h33 = matrix[(2, 2)];
        if !h33.is_finite() || h33.abs() < 1e-12 {
            return Err(AlignError::Degenerate("h33 vanishes; cannot normalize"));
        }
        let matrix = matrix / h33;
        let det = matrix.determinant();
        if !det.is_finite() || det.abs() <= 1e-10 {
            return Err(AlignError::NotInvertible(det.abs()));
        }
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> Self {
        let inv = self
            .matrix
            .try_inverse()
            .expect("homography invertibility is checked at construction");
        Self {
            matrix: inv / inv[(2, 2)],
        }
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    #[inline]
    pub fn apply(&self, p: &Point2<f64>) -> Option<Point2<f64>> {
        let m = &self.matrix;
        let w = m[(2, 0)] * p.x + m[(2, 1)] * p.y + m[(2, 2)];
        if w.abs() < 1e-12 {
            return None;
        }
        Some(Point2::new(
            (m[(0, 0)] * p.x + m[(0, 1)] * p.y + m[(0, 2)]) / w,
            (m[(1, 0)] * p.x + m[(1, 1)] * p.y + m[(1, 2)]) / w,
        ))
    }

    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.matrix;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    /// Inlier threshold on the symmetric transfer error, in pixels.
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold_px: 1.5,
            max_iterations: 2000,
            confidence: 0.999,
            min_inlier_ratio: 0.3,
            seed: 0,
        }
    }
}

/// `sqrt(|p1 − H·p0|² + |p0 − H⁻¹·p1|²)`, infinite if either map fails.
pub fn symmetric_transfer_error(h: &Homography, h_inv: &Homography, c: &Correspondence) -> f64 {
    match (h.apply(&c.p0), h_inv.apply(&c.p1)) {
        (Some(fwd), Some(bwd)) => ((c.p1 - fwd).norm_squared() + (c.p0 - bwd).norm_squared()).sqrt(),
        _ => f64::INFINITY,
    }
}

/// Similarity that moves the centroid to the origin and scales the mean
/// distance to √2.
fn normalizing_transform(points: impl Iterator<Item = Point2<f64>> + Clone) -> Option<Matrix3<f64>> {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (mx, my) = (sx / n, sy / n);
    let mean_dist = points
        .map(|p| ((p.x - mx).powi(2) + (p.y - my).powi(2)).sqrt())
        .sum::<f64>()
        / n;
    if mean_dist < 1e-12 {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0))
}

#[inline]
fn transform(t: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = t * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// Normalized direct linear transform over all given matches.
fn dlt(corrs: &[Correspondence]) -> Result<Homography, AlignError> {
    let n = corrs.len();
    if n < MIN_CORRESPONDENCES {
        return Err(AlignError::InsufficientSupport {
            found: n,
            needed: MIN_CORRESPONDENCES,
        });
    }
    let t0 =
        normalizing_transform(corrs.iter().map(|c| c.p0)).ok_or(AlignError::Degenerate("coincident source points"))?;
    let t1 =
        normalizing_transform(corrs.iter().map(|c| c.p1)).ok_or(AlignError::Degenerate("coincident target points"))?;

    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, c) in corrs.iter().enumerate() {
        let p = transform(&t0, &c.p0);
        let q = transform(&t1, &c.p1);
        let (r0, r1) = (2 * i, 2 * i + 1);
        a[(r0, 0)] = -p.x;
        a[(r0, 1)] = -p.y;
        a[(r0, 2)] = -1.0;
        a[(r0, 6)] = q.x * p.x;
        a[(r0, 7)] = q.x * p.y;
        a[(r0, 8)] = q.x;
        a[(r1, 3)] = -p.x;
        a[(r1, 4)] = -p.y;
        a[(r1, 5)] = -1.0;
        a[(r1, 6)] = q.y * p.x;
        a[(r1, 7)] = q.y * p.y;
        a[(r1, 8)] = q.y;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(AlignError::Degenerate("SVD did not converge"))?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(AlignError::Degenerate("empty SVD"))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t1_inv = t1
        .try_inverse()
        .ok_or(AlignError::Degenerate("singular normalization"))?;
    Homography::from_matrix(t1_inv * hn * t0)
}

/// Twice the signed triangle area, scaled relative to the edge lengths.
fn nearly_collinear(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> bool {
    let ab = b - a;
    let ac = c - a;
    let cross = ab.x * ac.y - ab.y * ac.x;
    cross.abs() <= 1e-9 * (ab.norm_squared() + ac.norm_squared()).max(1e-300)
}

fn sample_is_degenerate(sample: &[Correspondence; 4]) -> bool {
    const TRIPLES: [(usize, usize, usize); 4] = [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)];
    TRIPLES.iter().any(|&(i, j, k)| {
        nearly_collinear(&sample[i].p0, &sample[j].p0, &sample[k].p0)
            || nearly_collinear(&sample[i].p1, &sample[j].p1, &sample[k].p1)
    })
}

/// True when every point lies on one line.
fn all_collinear(points: impl Iterator<Item = Point2<f64>> + Clone) -> bool {
    let n = points.clone().count() as f64;
    let (sx, sy) = points.clone().fold((0.0, 0.0), |(ax, ay), p| (ax + p.x, ay + p.y));
    let (mx, my) = (sx / n, sy / n);
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        cxx += dx * dx;
        cxy += dx * dy;
        cyy += dy * dy;
    }
    let trace = cxx + cyy;
    let det = cxx * cyy - cxy * cxy;
    let disc = (trace * trace * 0.25 - det).max(0.0).sqrt();
    let smallest = trace * 0.5 - disc;
    trace <= 0.0 || smallest <= 1e-12 * trace
}

fn inlier_mask(h: &Homography, corrs: &[Correspondence], threshold: f64) -> (Vec<bool>, usize) {
    let h_inv = h.inverse();
    let mut count = 0;
    let mask = corrs
        .iter()
        .map(|c| {
            let ok = symmetric_transfer_error(h, &h_inv, c) <= threshold;
            count += ok as usize;
            ok
        })
        .collect();
    (mask, count)
}

/// Robust homography: RANSAC over 4-point minimal sets followed by a DLT
/// refit on the consensus set.
pub fn estimate_homography(corrs: &CorrespondenceSet, params: &RansacParams) -> Result<Homography, AlignError> {
    let items = corrs.as_slice();
    let n = items.len();
    if n < MIN_CORRESPONDENCES {
        return Err(AlignError::InsufficientSupport {
            found: n,
            needed: MIN_CORRESPONDENCES,
        });
    }
    if all_collinear(items.iter().map(|c| c.p0)) || all_collinear(items.iter().map(|c| c.p1)) {
        return Err(AlignError::Degenerate("all correspondences are collinear"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(Homography, usize)> = None;
    let mut needed = params.max_iterations;
    let mut iteration = 0;
    while iteration < needed.min(params.max_iterations) {
        iteration += 1;
        let picks = rand::seq::index::sample(&mut rng, n, 4);
        let sample = [
            items[picks.index(0)],
            items[picks.index(1)],
            items[picks.index(2)],
            items[picks.index(3)],
        ];
        if sample_is_degenerate(&sample) {
            continue;
        }
        let Ok(h) = dlt(&sample) else { continue };
        let (_, count) = inlier_mask(&h, items, params.threshold_px);
        if best.as_ref().is_none_or(|(_, b)| count > *b) {
            best = Some((h, count));
            let ratio = count as f64 / n as f64;
            needed = adaptive_iterations(ratio, params.confidence, params.max_iterations);
        }
    }

    let (mut h, _) = best.ok_or(AlignError::Degenerate("no non-degenerate minimal sample"))?;
    let (mut mask, mut count) = inlier_mask(&h, items, params.threshold_px);
    // Refit on the consensus set until it stops growing.
    for _ in 0..5 {
        if count < MIN_CORRESPONDENCES {
            break;
        }
        let inliers: Vec<Correspondence> = items.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        let Ok(refit) = dlt(&inliers) else { break };
        let (refit_mask, refit_count) = inlier_mask(&refit, items, params.threshold_px);
        if refit_count < count {
            break;
        }
        let stable = refit_mask == mask;
        h = refit;
        mask = refit_mask;
        count = refit_count;
        if stable {
            break;
        }
    }

    let ratio = count as f64 / n as f64;
    if ratio < params.min_inlier_ratio {
        return Err(AlignError::AlignmentFailed {
            ratio,
            min_ratio: params.min_inlier_ratio,
        });
    }
    log::debug!("homography: {count}/{n} inliers after {iteration} iterations");
    Ok(h)
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64, max: usize) -> usize {
    let p_good = inlier_ratio.powi(4);
    if p_good >= 1.0 - 1e-12 {
        return 1;
    }
    if p_good <= 1e-12 {
        return max;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if k.is_finite() {
        (k.ceil() as usize).clamp(1, max)
    } else {
        max
    }
}
