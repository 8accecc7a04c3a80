use nalgebra::Point2;

use super::AlignError;
use crate::imaging::{FlowField, Mask};

/// Minimum number of correspondences any homography fit needs.
pub const MIN_CORRESPONDENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub p0: Point2<f64>,
    pub p1: Point2<f64>,
    pub weight: f32,
}

/// Point matches between the two photos. Both endpoints lie inside a
/// `width × height` image and weights lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorrespondenceSet {
    pub width: usize,
    pub height: usize,
    items: Vec<Correspondence>,
}

impl CorrespondenceSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            items: Vec::new(),
        }
    }

    fn in_bounds(&self, p: &Point2<f64>) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Adds a match. Returns `false` (and drops it) when either endpoint is
    /// out of bounds; the weight is clamped to `[0, 1]`.
    pub fn push(&mut self, p0: Point2<f64>, p1: Point2<f64>, weight: f32) -> bool {
        if !(self.in_bounds(&p0) && self.in_bounds(&p1)) {
            return false;
        }
        let weight = if weight.is_finite() {
            weight.clamp(0.0, 1.0)
        } else {
            0.0
        };
        self.items.push(Correspondence { p0, p1, weight });
        true
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Correspondence> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[Correspondence] {
        &self.items
    }

    /// Keeps the matches selected by `keep`.
    pub fn select(&self, keep: &[bool]) -> CorrespondenceSet {
        CorrespondenceSet {
            width: self.width,
            height: self.height,
            items: self
                .items
                .iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(c, _)| *c)
                .collect(),
        }
    }

    /// Re-expresses the second endpoints through `map` (e.g. the inverse
    /// homography), dropping matches that leave the image.
    pub fn map_second(&self, map: impl Fn(&Point2<f64>) -> Option<Point2<f64>>) -> CorrespondenceSet {
        let mut out = CorrespondenceSet::new(self.width, self.height);
        for c in &self.items {
            if let Some(p1) = map(&c.p1) {
                out.push(c.p0, p1, c.weight);
            }
        }
        out
    }
}

/// Marks the pixels whose flow magnitude does not exceed the
/// `keep_fraction` quantile of all magnitudes.
///
/// With `N` pixels the threshold is the `⌈keep_fraction·N⌉`-th smallest
/// magnitude, so exactly that many pixels are kept up to ties.
pub fn static_mask(flow01: &FlowField, keep_fraction: f32) -> Result<Mask, AlignError> {
    if !(keep_fraction > 0.0 && keep_fraction < 1.0) {
        return Err(AlignError::InvalidParameter(format!(
            "keep_fraction must lie in (0, 1), got {keep_fraction}"
        )));
    }
    let (w, h) = flow01.dims();
    let magnitudes: Vec<f32> = flow01.pixels().map(|[dx, dy]| dx.hypot(dy)).collect();
    if magnitudes.is_empty() {
        return Ok(Mask::new(w, h));
    }
    let n = magnitudes.len();
    let k = keep_count(keep_fraction, n);
    let mut scratch = magnitudes.clone();
    let (_, &mut threshold, _) = scratch.select_nth_unstable_by(k - 1, f32::total_cmp);
    Ok(Mask::from_vec(
        w,
        h,
        magnitudes.iter().map(|&m| m <= threshold).collect(),
    ))
}

/// `⌈fraction·n⌉` in `[1, n]`, tolerant to the representation error of
/// `fraction` (0.4·5 must give 2, not 3).
fn keep_count(fraction: f32, n: usize) -> usize {
    let exact = fraction as f64 * n as f64;
    let nearest = exact.round();
    let k = if (exact - nearest).abs() <= 1e-6 * exact.max(1.0) {
        nearest
    } else {
        exact.ceil()
    };
    (k as usize).clamp(1, n)
}

/// One correspondence `(p, p + flow01(p))` per masked pixel on a
/// `stride`-spaced grid whose target stays inside the image.
pub fn correspondences_from_flow(
    flow01: &FlowField,
    mask: &Mask,
    stride: usize,
) -> Result<CorrespondenceSet, AlignError> {
    if flow01.dims() != mask.dims() {
        return Err(AlignError::ShapeMismatch {
            flow: flow01.dims(),
            mask: mask.dims(),
        });
    }
    let stride = stride.max(1);
    let (w, h) = flow01.dims();
    let mut set = CorrespondenceSet::new(w, h);
    for y in (0..h).step_by(stride) {
        for x in (0..w).step_by(stride) {
            if !mask.get(x, y) {
                continue;
            }
            let [dx, dy] = flow01.pixel(x, y);
            let p0 = Point2::new(x as f64, y as f64);
            let p1 = Point2::new(x as f64 + dx as f64, y as f64 + dy as f64);
            set.push(p0, p1, 1.0);
        }
    }
    if set.len() < MIN_CORRESPONDENCES {
        return Err(AlignError::InsufficientSupport {
            found: set.len(),
            needed: MIN_CORRESPONDENCES,
        });
    }
    Ok(set)
}
