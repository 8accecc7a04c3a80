//! Point-cloud rendering of two flow-augmented LDIs at an intermediate time.
//!
//! Each LDI becomes a point cloud. Both clouds are moved to time `t` along
//! their scene flow, splatted separately into the target camera, blended
//! with a depth-aware weight that favors the temporally nearer cloud and the
//! nearer surface, and any pixel neither cloud reaches is filled from its
//! background-leaning neighborhood.

mod blend;
mod splat;

pub use blend::{blend, blend_weight, fill_and_compose, BlendParams, Blended};
pub use splat::{splat, SplatBuffers, SplatParams, TILE_SIZE};

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, CameraError, Intrinsics};
use crate::imaging::{self, ImagingError, RgbMap};
use crate::sceneflow::SceneFlowLdi;

pub const MIN_RADIUS_PX: f32 = 0.5;
pub const MAX_RADIUS_PX: f32 = 8.0;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("covered pixel ({x}, {y}) of layer {layer} has no scene flow")]
    MissingFlow { layer: usize, x: usize, y: usize },
    #[error("empty render: no pixel is covered by either point cloud")]
    EmptyRender,
    #[error("time {0} outside [0, 1]")]
    InvalidTime(f32),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}

/// Structure-of-arrays point cloud in reference-camera coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    pub colors: Vec<[u8; 4]>,
    pub flows: Vec<[f32; 3]>,
    /// Splat radius in pixels is `base · radius_scale / z_cam`.
    pub radius_scales: Vec<f32>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: [f32; 3], color: [u8; 4], flow: [f32; 3], radius_scale: f32) {
        self.positions.push(position);
        self.colors.push(color);
        self.flows.push(flow);
        self.radius_scales.push(radius_scale);
    }

    /// Median point depth in the reference frame, or `None` when empty.
    pub fn median_depth(&self) -> Option<f32> {
        median(self.positions.iter().map(|p| p[2]).collect())
    }
}

fn median(mut values: Vec<f32>) -> Option<f32> {
    if values.is_empty() {
        return None;
    }
    let mid = values.len() / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    Some(*m)
}

#[inline]
pub fn quantize_color(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One point per covered LDI pixel, unprojected at depth `1 / disparity`.
///
/// Every point carries the same radius scale, the inverse of the cloud's
/// median disparity, so that a point at the median disparity is splatted
/// with the base radius.
pub fn lift_ldi(scene: &SceneFlowLdi, k: &Intrinsics) -> Result<PointCloud, RenderError> {
    let ldi = &scene.ldi;
    let w = ldi.width;
    let mut disparities = Vec::new();
    let mut cloud = PointCloud::default();
    for (l, (layer, flow)) in ldi.layers.iter().zip(&scene.flow).enumerate() {
        for i in 0..w * ldi.height {
            if !layer.covered_at(i) {
                continue;
            }
            let (x, y) = (i % w, i / w);
            if !flow.defined.get_at(i) {
                return Err(RenderError::MissingFlow { layer: l, x, y });
            }
            let d = layer.disparity.pixel_at(i)[0];
            let p = k.unproject(x as f64, y as f64, 1.0 / d as f64);
            let [r, g, b, a] = layer.color.pixel_at(i);
            let u = flow.u.pixel_at(i);
            cloud.push(
                [p.x as f32, p.y as f32, p.z as f32],
                [r, g, b, a].map(quantize_color),
                u.map(|v| v as f32),
                0.0,
            );
            disparities.push(d);
        }
    }
    if let Some(reference) = median(disparities) {
        cloud.radius_scales.fill(1.0 / reference);
    }
    Ok(cloud)
}

/// Which photo a cloud was lifted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeOrigin {
    /// Displaced by `t·u`.
    Zero,
    /// Displaced by `(1 − t)·u`.
    One,
}

impl TimeOrigin {
    #[inline]
    pub fn step(self, t: f32) -> f32 {
        match self {
            TimeOrigin::Zero => t,
            TimeOrigin::One => 1.0 - t,
        }
    }
}

#[inline]
pub(crate) fn displaced(p: [f32; 3], u: [f32; 3], s: f32) -> [f32; 3] {
    [p[0] + s * u[0], p[1] + s * u[1], p[2] + s * u[2]]
}

/// Point positions at time `t`.
pub fn displace(cloud: &PointCloud, origin: TimeOrigin, t: f32) -> Vec<[f32; 3]> {
    let s = origin.step(t);
    cloud
        .positions
        .iter()
        .zip(&cloud.flows)
        .map(|(&p, &u)| displaced(p, u, s))
        .collect()
}

/// `base · disparity / reference`, clamped to the admissible radius range.
#[inline]
pub fn point_radius(disparity: f32, base_radius_px: f32, reference_disparity: f32) -> f32 {
    (base_radius_px * disparity / reference_disparity).clamp(MIN_RADIUS_PX, MAX_RADIUS_PX)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderParams {
    pub beta: f32,
    pub base_radius_px: f32,
    /// Relative depth band around the nearest surface.
    pub band: f32,
    /// Soft z-falloff rate per unit of relative depth inside the band.
    pub alpha_z: f32,
}

impl Default for RenderParams {
    fn default() -> Self {
        Self {
            beta: 10.0,
            base_radius_px: 1.7,
            band: 0.05,
            alpha_z: 20.0,
        }
    }
}

impl RenderParams {
    pub fn splat(&self) -> SplatParams {
        SplatParams {
            base_radius_px: self.base_radius_px,
            band: self.band,
            alpha_z: self.alpha_z,
        }
    }
}

/// Both clouds plus the depth scale used to normalize blend depths.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub p0: PointCloud,
    pub p1: PointCloud,
    pub median_depth: f32,
}

impl Scene {
    /// The depth scale is the median reference depth of the first cloud,
    /// falling back to the second and then to 1.
    pub fn new(p0: PointCloud, p1: PointCloud) -> Self {
        let median_depth = p0.median_depth().or_else(|| p1.median_depth()).unwrap_or(1.0);
        Self { p0, p1, median_depth }
    }

    pub fn point_count(&self) -> usize {
        self.p0.len() + self.p1.len()
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub image: RgbMap,
    pub blended: Blended,
}

impl Frame {
    /// Writes `frame_<n>_{color,depth,weight}.pfm`.
    pub fn write_debug(&self, dir: &Path, n: usize) -> Result<(), ImagingError> {
        let b = &self.blended;
        let color = b.color.map(|[r, g, bl, _]| [r, g, bl]);
        imaging::write_pfm(dir.join(format!("frame_{n}_color.pfm")), &color)?;
        imaging::write_pfm(dir.join(format!("frame_{n}_depth.pfm")), &b.depth)?;
        imaging::write_pfm(dir.join(format!("frame_{n}_weight.pfm")), &b.weight)?;
        Ok(())
    }
}

/// Splats both clouds at time `t`, blends, and fills holes.
pub fn render_frame(scene: &Scene, camera: &Camera, t: f32, params: &RenderParams) -> Result<Frame, RenderError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(RenderError::InvalidTime(t));
    }
    camera.validate()?;
    let sp = params.splat();
    let (b0, b1) = rayon::join(
        || splat(&scene.p0, TimeOrigin::Zero, t, camera, &sp),
        || splat(&scene.p1, TimeOrigin::One, t, camera, &sp),
    );
    let bp = BlendParams {
        beta: params.beta,
        depth_scale: scene.median_depth,
    };
    let blended = blend(&b0, &b1, t, &bp);
    let image = fill_and_compose(&blended)?;
    Ok(Frame { image, blended })
}
