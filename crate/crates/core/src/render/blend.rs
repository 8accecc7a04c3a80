use rayon::prelude::*;

use super::splat::SplatBuffers;
use super::RenderError;
use crate::imaging::pushpull::push_pull;
use crate::imaging::{Mask, RgbMap, RgbaMap, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendParams {
    pub beta: f32,
    /// Depths are divided by this before weighting.
    pub depth_scale: f32,
}

/// Weight of the time-0 render:
/// `(1−t)·e^(−β·D0) / ((1−t)·e^(−β·D0) + t·e^(−β·D1))`.
///
/// Evaluated as `1 / (1 + t/(1−t) · e^(β·(D0−D1)))` so that large depths
/// cannot underflow both terms. The result is never on the wrong side of
/// `1 − t` relative to the depth order.
pub fn blend_weight(t: f64, beta: f64, d0: f64, d1: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    if d0 == d1 {
        return 1.0 - t;
    }
    let w = 1.0 / (1.0 + t / (1.0 - t) * (beta * (d0 - d1)).exp());
    if d0 < d1 {
        w.max(1.0 - t)
    } else {
        w.min(1.0 - t)
    }
}

/// Blended color and depth with the weight map and coverage.
#[derive(Debug, Clone, PartialEq)]
pub struct Blended {
    pub color: RgbaMap,
    /// Unnormalized blended depth.
    pub depth: ScalarMap,
    /// Weight given to the time-0 render.
    pub weight: ScalarMap,
    pub coverage: Mask,
}

/// Per-pixel depth-aware blend of the two splat results.
///
/// Where only one render covers a pixel its values are taken unchanged.
/// Uncovered pixels are zero with zero coverage.
pub fn blend(b0: &SplatBuffers, b1: &SplatBuffers, t: f32, params: &BlendParams) -> Blended {
    let (w, h) = b0.color.dims();
    assert_eq!(b1.color.dims(), (w, h));
    let beta = params.beta as f64;
    let scale = params.depth_scale as f64;
    let t = t as f64;

    let pixels: Vec<([f32; 4], f32, f32, bool)> = (0..w * h)
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            let weight = match (b0.covered_at(i), b1.covered_at(i)) {
                (false, false) => return ([0.0; 4], 0.0, 0.0, false),
                (true, false) => 1.0,
                (false, true) => 0.0,
                (true, true) => {
                    let d0 = b0.depth.pixel_at(i)[0] as f64 / scale;
                    let d1 = b1.depth.pixel_at(i)[0] as f64 / scale;
                    blend_weight(t, beta, d0, d1)
                }
            };
            let mix = |a: f32, b: f32| (weight * a as f64 + (1.0 - weight) * b as f64) as f32;
            let (c0, c1) = (b0.color.pixel_at(i), b1.color.pixel_at(i));
            let color = [0, 1, 2, 3].map(|c| mix(c0[c], c1[c]));
            let depth = mix(b0.depth.pixel_at(i)[0], b1.depth.pixel_at(i)[0]);
            (color, depth, weight as f32, true)
        })
        .collect();

    let mut out = Blended {
        color: RgbaMap::new(w, h),
        depth: ScalarMap::new(w, h),
        weight: ScalarMap::new(w, h),
        coverage: Mask::new(w, h),
    };
    for (i, (c, d, wt, cov)) in pixels.into_iter().enumerate() {
        out.color.set_pixel_at(i, c);
        out.depth.set_pixel_at(i, [d]);
        out.weight.set_pixel_at(i, [wt]);
        out.coverage.set_at(i, cov);
    }
    out
}

/// Final RGB image: covered pixels keep their blended color, uncovered ones
/// are filled by push-pull with importance proportional to depth, so holes
/// take on the color of the farther surface around them. Output is clamped
/// to `[0, 1]`.
pub fn fill_and_compose(blended: &Blended) -> Result<RgbMap, RenderError> {
    let (w, h) = blended.color.dims();
    if blended.coverage.is_empty() {
        return Err(RenderError::EmptyRender);
    }
    let rgb = blended.color.map(|[r, g, b, _]| [r, g, b]);
    let filled = if blended.coverage.count() == w * h {
        rgb
    } else {
        let importance: Vec<f32> = (0..w * h)
            .map(|i| {
                if blended.coverage.get_at(i) {
                    blended.depth.pixel_at(i)[0].max(f32::MIN_POSITIVE)
                } else {
                    0.0
                }
            })
            .collect();
        push_pull(&rgb, &importance).ok_or(RenderError::EmptyRender)?
    };
    Ok(filled.map(|p| p.map(|v| v.clamp(0.0, 1.0))))
}
