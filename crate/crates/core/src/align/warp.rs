use nalgebra::Point2;

use super::Homography;
use crate::imaging::{DisparityMap, FlowField, Mask, RgbaMap, ScalarMap};

/// The second photo resampled into the reference frame.
#[derive(Debug, Clone)]
pub struct AlignedFrame {
    /// RGBA with alpha 0 where the source was not visible.
    pub image: RgbaMap,
    pub valid: Mask,
    pub disparity: DisparityMap,
    /// Backward flow, reference-frame pixel → matching pixel in the first photo.
    pub flow10: FlowField,
}

#[inline]
fn inside(p: &Point2<f64>, w: usize, h: usize) -> bool {
    const EPS: f64 = 1e-9;
    p.x >= -EPS && p.y >= -EPS && p.x <= (w - 1) as f64 + EPS && p.y <= (h - 1) as f64 + EPS
}

/// Inverse-warps the second photo, its disparity, and its backward flow
/// into the first photo's frame.
///
/// `h` maps first-photo pixels to second-photo pixels, so the aligned value
/// at `p` is sampled at `h(p)`. Pixels whose source falls outside the second
/// photo are marked invalid (alpha 0, disparity invalid, zero flow).
pub fn warp_to_reference(
    image1: &RgbaMap,
    disparity1: &DisparityMap,
    flow10: &FlowField,
    h: &Homography,
) -> AlignedFrame {
    let (w, ht) = image1.dims();
    let mut image = RgbaMap::new(w, ht);
    let mut valid = Mask::new(w, ht);
    let mut disparity = ScalarMap::new(w, ht);
    let mut disparity_valid = Mask::new(w, ht);
    let mut flow = FlowField::new(w, ht);

    for y in 0..ht {
        for x in 0..w {
            let p = Point2::new(x as f64, y as f64);
            let Some(q) = h.apply(&p).filter(|q| inside(q, w, ht)) else {
                continue;
            };
            let (qx, qy) = (q.x as f32, q.y as f32);
            let i = y * w + x;
            valid.set_at(i, true);
            let mut rgba = image1.bilinear(qx, qy);
            rgba[3] = 1.0;
            image.set_pixel_at(i, rgba);
            if let Some(d) = disparity1.sample(qx, qy) {
                disparity.set_pixel_at(i, [d]);
                disparity_valid.set_at(i, true);
            }
            let [fx, fy] = flow10.bilinear(qx, qy);
            // The match of q in the first photo is q + f10(q); expressed from p.
            let shift = q - p;
            flow.set_pixel_at(i, [(shift.x + fx as f64) as f32, (shift.y + fy as f64) as f32]);
        }
    }
    AlignedFrame {
        image,
        valid,
        disparity: DisparityMap {
            values: disparity,
            valid: disparity_valid,
        },
        flow10: flow,
    }
}

/// Re-targets the forward flow so it points into the aligned second frame:
/// `f01'(p) = h⁻¹(p + f01(p)) − p`.
pub fn reexpress_forward_flow(flow01: &FlowField, h: &Homography) -> FlowField {
    let h_inv = h.inverse();
    let (w, ht) = flow01.dims();
    FlowField::from_fn(w, ht, |x, y| {
        let [fx, fy] = flow01.pixel(x, y);
        let target = Point2::new(x as f64 + fx as f64, y as f64 + fy as f64);
        match h_inv.apply(&target) {
            Some(mapped) => {
                let d = mapped - target;
                [(d.x + fx as f64) as f32, (d.y + fy as f64) as f32]
            }
            None => [fx, fy],
        }
    })
}
