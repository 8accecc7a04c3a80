use rayon::prelude::*;

use super::{Ldi, LdiError, LdiLayer};
use crate::imaging::pushpull::push_pull;
use crate::imaging::{DenseMap, Mask};

/// Relative slack on the depth clamp, absorbing rounding in the diffusion.
/// Survivors inside the slack are snapped onto the bound.
const CLAMP_SLACK: f32 = 1e-5;

/// `⌈0.05 · min(width, height)⌉`.
pub fn default_margin(width: usize, height: usize) -> usize {
    (0.05 * width.min(height) as f64).ceil() as usize
}

/// Context and target regions for inpainting layer `l`.
///
/// The context is every pixel observed in layer `l` or any farther layer.
/// The target is every pixel within `margin_px` (chessboard distance) of
/// layer `l`'s observed pixels that is not part of the context.
pub fn inpaint_region(ldi: &Ldi, l: usize, margin_px: usize) -> Result<(Mask, Mask), LdiError> {
    if l >= ldi.layer_count() {
        return Err(LdiError::LayerOutOfRange {
            index: l,
            count: ldi.layer_count(),
        });
    }
    let mut context = Mask::new(ldi.width, ldi.height);
    for layer in &ldi.layers[l..] {
        context = context.union(&layer.observed);
    }
    let target = ldi.layers[l].observed.dilate(margin_px).difference(&context);
    Ok((context, target))
}

/// Fills `inpaint_mask` in `layer` by push-pull diffusion seeded from the
/// observed colors and disparities under `context_mask`.
///
/// Filled pixels farther than the layer's farthest observed pixel are
/// discarded. Filled colors and disparities are kept within the
/// per-channel range of the context.
pub fn inpaint_layer(layer: &LdiLayer, context_mask: &Mask, inpaint_mask: &Mask, ldi: &Ldi) -> LdiLayer {
    let mut out = layer.clone();
    let Some(min_disparity) = layer.min_observed_disparity() else {
        return out;
    };
    let (w, h) = (ldi.width, ldi.height);

    let mut seeds = DenseMap::<4>::new(w, h);
    let mut importance = vec![0.0f32; w * h];
    let mut lo = [f32::INFINITY; 3];
    let mut hi = [f32::NEG_INFINITY; 3];
    let (mut d_lo, mut d_hi) = (f32::INFINITY, f32::NEG_INFINITY);
    for i in 0..w * h {
        if !context_mask.get_at(i) {
            continue;
        }
        let Some(([r, g, b, _], d)) = ldi.observed_from(0, i) else {
            continue;
        };
        seeds.set_pixel_at(i, [r, g, b, d]);
        importance[i] = 1.0;
        for (c, v) in [r, g, b].into_iter().enumerate() {
            lo[c] = lo[c].min(v);
            hi[c] = hi[c].max(v);
        }
        d_lo = d_lo.min(d);
        d_hi = d_hi.max(d);
    }
    let Some(filled) = push_pull(&seeds, &importance) else {
        return out;
    };

    let floor = min_disparity * (1.0 - CLAMP_SLACK);
    for i in 0..w * h {
        if !inpaint_mask.get_at(i) || layer.observed.get_at(i) {
            continue;
        }
        let [r, g, b, d] = filled.pixel_at(i);
        let d = d.clamp(d_lo, d_hi);
        if !(d >= floor) {
            continue;
        }
        let rgb = [r.clamp(lo[0], hi[0]), g.clamp(lo[1], hi[1]), b.clamp(lo[2], hi[2])];
        out.color.set_pixel_at(i, [rgb[0], rgb[1], rgb[2], 1.0]);
        out.disparity.set_pixel_at(i, [d.max(min_disparity)]);
    }
    out
}

/// Inpaints every layer, each seeded only from observed pixels.
pub fn inpaint_ldi(ldi: &Ldi, margin_px: usize) -> Ldi {
    let layers = (0..ldi.layer_count())
        .into_par_iter()
        .map(|l| {
            let (context, target) = inpaint_region(ldi, l, margin_px).expect("layer index in range");
            inpaint_layer(&ldi.layers[l], &context, &target, ldi)
        })
        .collect();
    Ldi {
        width: ldi.width,
        height: ldi.height,
        layers,
    }
}
