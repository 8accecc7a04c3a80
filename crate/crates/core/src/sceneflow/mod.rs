//! Per-layer 3D scene flow.
//!
//! Pixels whose forward and backward flows agree are lifted to 3D using the
//! depths at both ends of the flow vector. Every other covered LDI pixel
//! (occluded, inconsistent, or inpainted) receives flow by diffusion from
//! lifted pixels of the same layer.
//!
//! Forward scene flow `u0` carries a point of the first photo from time 0 to
//! time 1. Backward scene flow `u1` carries a point of the second photo from
//! time 1 back to time 0, so a point of either cloud reaches time `t` as
//! `x0 + t·u0` or `x1 + (1 − t)·u1`.

mod diffuse;

pub use diffuse::diffuse_flow;

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Intrinsics;
use crate::imaging::{self, DenseMap, DisparityMap, FlowField, ImagingError, Mask, ScalarMap};
use crate::ldi::{Ldi, LdiLayer};

#[derive(Debug, Error)]
pub enum SceneFlowError {
    #[error("consistency threshold must be positive, got {0}")]
    InvalidThreshold(f32),
    #[error("no valid disparity at the {end} end of the flow from ({x}, {y})")]
    InvalidDisparity { x: usize, y: usize, end: &'static str },
    #[error("{what} is {got:?}, expected {expected:?}")]
    DimensionMismatch {
        what: &'static str,
        got: (usize, usize),
        expected: (usize, usize),
    },
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Forward and backward flow in the shared (aligned) frame with their
/// mutual-consistency masks.
#[derive(Debug, Clone)]
pub struct FlowPair {
    pub f01: FlowField,
    pub f10: FlowField,
    pub mutual01: Mask,
    pub mutual10: Mask,
    pub tau: f32,
}

impl FlowPair {
    pub fn new(f01: FlowField, f10: FlowField, tau: f32) -> Result<Self, SceneFlowError> {
        let (mutual01, mutual10) = mutual_check(&f01, &f10, tau)?;
        Ok(Self {
            f01,
            f10,
            mutual01,
            mutual10,
            tau,
        })
    }
}

/// Pixels whose flow lands in bounds and is undone by the opposite flow
/// sampled at the landing point, to within `tau` pixels.
fn consistent(forward: &FlowField, backward: &FlowField, tau: f32) -> Mask {
    let (w, h) = forward.dims();
    let (xmax, ymax) = ((w - 1) as f32, (h - 1) as f32);
    Mask::from_fn(w, h, |x, y| {
        let [fx, fy] = forward.pixel(x, y);
        let (qx, qy) = (x as f32 + fx, y as f32 + fy);
        if !(qx >= 0.0 && qy >= 0.0 && qx <= xmax && qy <= ymax) {
            return false;
        }
        let [bx, by] = backward.bilinear(qx, qy);
        let (rx, ry) = ((fx + bx) as f64, (fy + by) as f64);
        (rx * rx + ry * ry).sqrt() <= tau as f64
    })
}

/// Forward-backward consistency masks `(mutual01, mutual10)`.
pub fn mutual_check(f01: &FlowField, f10: &FlowField, tau: f32) -> Result<(Mask, Mask), SceneFlowError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SceneFlowError::InvalidThreshold(tau));
    }
    if f10.dims() != f01.dims() {
        return Err(SceneFlowError::DimensionMismatch {
            what: "backward flow",
            got: f10.dims(),
            expected: f01.dims(),
        });
    }
    Ok((consistent(f01, f10, tau), consistent(f10, f01, tau)))
}

/// 3D translation taking the point seen at pixel `p` with disparity
/// `d_source` to the point seen at `p + flow` in `d_target`.
///
/// The target disparity is sampled bilinearly from valid pixels only.
pub fn lift_scene_flow(
    p: (usize, usize),
    d_source: f32,
    flow: [f32; 2],
    d_target: &DisparityMap,
    k: &Intrinsics,
) -> Result<Vector3<f64>, SceneFlowError> {
    let invalid = |end| SceneFlowError::InvalidDisparity { x: p.0, y: p.1, end };
    if !(d_source > 0.0 && d_source.is_finite()) {
        return Err(invalid("source"));
    }
    let (qx, qy) = (p.0 as f64 + flow[0] as f64, p.1 as f64 + flow[1] as f64);
    let d1 = d_target.sample(qx as f32, qy as f32).ok_or_else(|| invalid("target"))?;
    let x0 = k.unproject(p.0 as f64, p.1 as f64, 1.0 / d_source as f64);
    let x1 = k.unproject(qx, qy, 1.0 / d1 as f64);
    Ok(x1 - x0)
}

/// Scene flow for one LDI layer, in the reference camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowLayer {
    pub u: DenseMap<3, f64>,
    pub defined: Mask,
}

impl SceneFlowLayer {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            u: DenseMap::new(width, height),
            defined: Mask::new(width, height),
        }
    }

    /// Writes `sflow_<image>_<layer>_{x,y,z}.pfm`.
    pub fn write_debug(&self, dir: &Path, image: &str, layer: usize) -> Result<(), ImagingError> {
        let (w, h) = self.u.dims();
        for (c, axis) in ["x", "y", "z"].into_iter().enumerate() {
            let channel = ScalarMap::from_fn(w, h, |x, y| [self.u.pixel(x, y)[c] as f32]);
            imaging::write_pfm(dir.join(format!("sflow_{image}_{layer}_{axis}.pfm")), &channel)?;
        }
        Ok(())
    }
}

/// An LDI together with one scene-flow layer per LDI layer.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowLdi {
    pub ldi: Ldi,
    pub flow: Vec<SceneFlowLayer>,
}

impl SceneFlowLdi {
    pub fn write_debug(&self, dir: &Path, image: &str) -> Result<(), ImagingError> {
        for (l, layer) in self.flow.iter().enumerate() {
            layer.write_debug(dir, image, l)?;
        }
        Ok(())
    }
}

/// Lifts every observed, mutually consistent pixel of `layer`, then
/// diffuses to the layer's full coverage.
fn layer_flow(
    layer: &LdiLayer,
    flow: &FlowField,
    mutual: &Mask,
    d_target: &DisparityMap,
    k: &Intrinsics,
) -> SceneFlowLayer {
    let (w, h) = flow.dims();
    let mut lifted = SceneFlowLayer::new(w, h);
    for (x, y) in layer.observed.iter_set() {
        if !mutual.get(x, y) {
            continue;
        }
        let d = layer.disparity.pixel(x, y)[0];
        if let Ok(u) = lift_scene_flow((x, y), d, flow.pixel(x, y), d_target, k) {
            lifted.u.set_pixel(x, y, [u.x, u.y, u.z]);
            lifted.defined.set(x, y, true);
        }
    }
    diffuse_flow(&lifted, &layer.coverage())
}

fn flow_for_ldi(ldi: &Ldi, flow: &FlowField, mutual: &Mask, d_target: &DisparityMap, k: &Intrinsics) -> SceneFlowLdi {
    let flow = ldi
        .layers
        .par_iter()
        .map(|layer| layer_flow(layer, flow, mutual, d_target, k))
        .collect();
    SceneFlowLdi { ldi: ldi.clone(), flow }
}

/// Scene-flow layers for both LDIs. The first LDI gets forward flow
/// (time 0 → 1) from `f01`; the second gets backward flow (time 1 → 0)
/// from `f10`. Pixels whose target disparity is missing are treated like
/// inconsistent ones and filled by diffusion.
pub fn attach_flow_to_ldi(
    ldi0: &Ldi,
    ldi1: &Ldi,
    pair: &FlowPair,
    d0: &DisparityMap,
    d1_aligned: &DisparityMap,
    k: &Intrinsics,
) -> Result<(SceneFlowLdi, SceneFlowLdi), SceneFlowError> {
    let dims = pair.f01.dims();
    for (what, got) in [
        ("first LDI", (ldi0.width, ldi0.height)),
        ("second LDI", (ldi1.width, ldi1.height)),
        ("first disparity", d0.dims()),
        ("second disparity", d1_aligned.dims()),
    ] {
        if got != dims {
            return Err(SceneFlowError::DimensionMismatch {
                what,
                got,
                expected: dims,
            });
        }
    }
    let (a, b) = rayon::join(
        || flow_for_ldi(ldi0, &pair.f01, &pair.mutual01, d1_aligned, k),
        || flow_for_ldi(ldi1, &pair.f10, &pair.mutual10, d0, k),
    );
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::RgbaMap;
    use crate::ldi::{build_layers, cluster_disparity, inpaint_ldi};

    #[test]
    fn exact_inverse_flows_are_mutual() {
        let f01 = FlowField::filled(8, 6, [2.0, 0.0]);
        let f10 = FlowField::filled(8, 6, [-2.0, 0.0]);
        let (m01, m10) = mutual_check(&f01, &f10, 1.0).unwrap();
        for y in 0..6 {
            for x in 0..8 {
                assert_eq!(m01.get(x, y), x + 2 <= 7, "({x},{y})");
                assert_eq!(m10.get(x, y), x >= 2, "({x},{y})");
            }
        }
    }

    #[test]
    fn inconsistent_flow_rejected() {
        let f01 = FlowField::filled(8, 1, [2.0, 0.0]);
        let f10 = FlowField::filled(8, 1, [1.0, 0.0]);
        let (m01, _) = mutual_check(&f01, &f10, 1.0).unwrap();
        assert!(m01.is_empty());
    }

    #[test]
    fn out_of_bounds_target_rejected() {
        let f01 = FlowField::filled(4, 4, [0.0, 10.0]);
        let f10 = FlowField::filled(4, 4, [0.0, -10.0]);
        assert!(mutual_check(&f01, &f10, 1.0).unwrap().0.is_empty());
        assert!(matches!(
            mutual_check(&f01, &f10, 0.0),
            Err(SceneFlowError::InvalidThreshold(_))
        ));
    }

    fn disparity_at(w: usize, h: usize, at: (usize, usize), d: f32) -> DisparityMap {
        DisparityMap::from_values(ScalarMap::from_fn(w, h, |x, y| [if (x, y) == at { d } else { 0.0 }]))
    }

    #[test]
    fn lift_worked_example() {
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0);
        let target = disparity_at(32, 4, (20, 0), 0.5);
        let u = lift_scene_flow((10, 0), 1.0, [10.0, 0.0], &target, &k).unwrap();
        assert!((u - Vector3::new(0.3, 0.0, 1.0)).norm() < 1e-12, "{u}");
    }

    #[test]
    fn lift_static_and_axial_cases() {
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0);
        let same = disparity_at(4, 4, (0, 0), 0.5);
        assert_eq!(
            lift_scene_flow((0, 0), 0.5, [0.0, 0.0], &same, &k).unwrap(),
            Vector3::zeros()
        );
        let u = lift_scene_flow((0, 0), 1.0, [0.0, 0.0], &same, &k).unwrap();
        assert_eq!(u, Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn lift_needs_both_disparities() {
        let k = Intrinsics::new(100.0, 100.0, 0.0, 0.0);
        let target = disparity_at(8, 1, (5, 0), 0.5);
        assert!(matches!(
            lift_scene_flow((1, 0), 0.5, [1.0, 0.0], &target, &k),
            Err(SceneFlowError::InvalidDisparity { end: "target", .. })
        ));
        assert!(matches!(
            lift_scene_flow((1, 0), 0.0, [4.0, 0.0], &target, &k),
            Err(SceneFlowError::InvalidDisparity { end: "source", .. })
        ));
    }

    /// Far plane at disparity 0.25 with a near square at 0.5 moving `motion`
    /// pixels; both photos share the same background.
    fn moving_square(w: usize, h: usize, motion: i32) -> (Ldi, Ldi, FlowPair, DisparityMap, DisparityMap) {
        let square = |x: usize, y: usize, dx: i32| {
            let x = x as i32 - dx;
            (6..12).contains(&x) && (5..11).contains(&(y as i32))
        };
        let d = |dx: i32| {
            DisparityMap::from_values(ScalarMap::from_fn(w, h, move |x, y| {
                [if square(x, y, dx) { 0.5 } else { 0.25 }]
            }))
        };
        let (d0, d1) = (d(0), d(motion));
        let f01 = FlowField::from_fn(w, h, |x, y| [if square(x, y, 0) { motion as f32 } else { 0.0 }, 0.0]);
        let f10 = FlowField::from_fn(w, h, |x, y| {
            [if square(x, y, motion) { -motion as f32 } else { 0.0 }, 0.0]
        });
        let rgb = RgbaMap::filled(w, h, [0.5, 0.5, 0.5, 1.0]);
        let ldi = |d: &DisparityMap| inpaint_ldi(&build_layers(&rgb, d, &cluster_disparity(d, 0.12).unwrap()), 4);
        let pair = FlowPair::new(f01, f10, 1.0).unwrap();
        (ldi(&d0), ldi(&d1), pair, d0, d1)
    }

    #[test]
    fn static_scene_has_zero_flow() {
        let (l0, l1, pair, d0, d1) = moving_square(24, 16, 0);
        let k = Intrinsics::from_fov(24, 16, 55.0);
        let (a, b) = attach_flow_to_ldi(&l0, &l1, &pair, &d0, &d1, &k).unwrap();
        for s in [&a, &b] {
            for (layer, flow) in s.ldi.layers.iter().zip(&s.flow) {
                assert_eq!(flow.defined, layer.coverage());
                assert!(flow.u.data().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn moving_square_flow_by_layer() {
        let (w, h) = (24, 16);
        let (l0, l1, pair, d0, d1) = moving_square(w, h, 3);
        let k = Intrinsics::from_fov(w, h, 55.0);
        let (a, b) = attach_flow_to_ldi(&l0, &l1, &pair, &d0, &d1, &k).unwrap();
        assert_eq!(a.ldi.layer_count(), 2);
        // Background, including its inpainted part behind the square, is static.
        let bg = &a.flow[1];
        assert_eq!(bg.defined, a.ldi.layers[1].coverage());
        assert!(bg.u.data().iter().all(|&v| v == 0.0));
        // The square moves 3 px to the right at depth 2.
        let fx = 2.0 * 3.0 / k.fx;
        let fg = &a.flow[0];
        for (x, y) in a.ldi.layers[0].observed.iter_set() {
            let [ux, uy, uz] = fg.u.pixel(x, y);
            assert!(
                (ux - fx).abs() < 1e-9 && uy.abs() < 1e-12 && uz.abs() < 1e-12,
                "{ux} {uy} {uz}"
            );
        }
        // Backward flow points the other way.
        for (x, y) in b.ldi.layers[0].observed.iter_set() {
            assert!((b.flow[0].u.pixel(x, y)[0] + fx).abs() < 1e-9);
        }
    }

    #[test]
    fn reprojection_is_exact() {
        let (w, h) = (24, 16);
        let (l0, l1, pair, d0, d1) = moving_square(w, h, 3);
        let k = Intrinsics::new(30.0, 32.0, 11.2, 7.9);
        let (a, _) = attach_flow_to_ldi(&l0, &l1, &pair, &d0, &d1, &k).unwrap();
        let mut checked = 0;
        for (layer, flow) in a.ldi.layers.iter().zip(&a.flow) {
            for (x, y) in layer.observed.iter_set() {
                if !pair.mutual01.get(x, y) {
                    continue;
                }
                let x0 = k.unproject(x as f64, y as f64, 1.0 / layer.disparity.pixel(x, y)[0] as f64);
                let [ux, uy, uz] = flow.u.pixel(x, y);
                let moved = x0 + Vector3::new(ux, uy, uz);
                let (px, py) = k.project(&moved);
                let [fx, fy] = pair.f01.pixel(x, y);
                assert!((px - (x as f64 + fx as f64)).abs() < 1e-4 && (py - (y as f64 + fy as f64)).abs() < 1e-4);
                checked += 1;
            }
        }
        assert!(checked > 300);
    }

    #[test]
    fn dimension_mismatch_reported() {
        let (l0, l1, pair, d0, _) = moving_square(24, 16, 0);
        let small = DisparityMap::from_values(ScalarMap::filled(4, 4, [1.0]));
        let k = Intrinsics::from_fov(24, 16, 55.0);
        assert!(matches!(
            attach_flow_to_ldi(&l0, &l1, &pair, &d0, &small, &k),
            Err(SceneFlowError::DimensionMismatch {
                what: "second disparity",
                ..
            })
        ));
    }
}
