//! Tiled soft z-buffered splatting.
//!
//! Points are binned to 32×32 screen tiles by their projected footprint and
//! every tile is rendered independently, visiting its points in index order,
//! so the output does not depend on the number of worker threads.
//!
//! Each tile makes two passes. The first finds a reference depth per pixel:
//! the nearest point whose center lies within half a pixel diagonal, or,
//! when no point is that close, the nearest point whose footprint reaches
//! the pixel at all. The second pass accumulates only points within a
//! relative depth band around the reference, with a kernel weight damped
//! exponentially in relative depth.

use rayon::prelude::*;

use super::{displaced, PointCloud, TimeOrigin, MAX_RADIUS_PX, MIN_RADIUS_PX};
use crate::camera::Camera;
use crate::imaging::{RgbaMap, ScalarMap};

pub const TILE_SIZE: usize = 32;

/// Squared distance within which a point claims the pixel for the
/// reference depth. Slightly above half a pixel diagonal.
const CORE_RADIUS_SQ: f32 = 0.75 * 0.75;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatParams {
    pub base_radius_px: f32,
    pub band: f32,
    pub alpha_z: f32,
}

/// Normalized per-pixel splat results. Color and depth are zero where
/// `weight` is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatBuffers {
    pub color: RgbaMap,
    pub depth: ScalarMap,
    pub weight: ScalarMap,
}

impl SplatBuffers {
    #[inline]
    pub fn covered_at(&self, i: usize) -> bool {
        self.weight.data()[i] > 0.0
    }
}

#[derive(Clone, Copy)]
struct Projected {
    x: f32,
    y: f32,
    z: f32,
    radius: f32,
    color: [f32; 4],
}

/// Inclusive pixel range `[lo, hi]` reached by a footprint along one axis.
#[inline]
fn pixel_span(center: f32, radius: f32, len: usize) -> Option<(usize, usize)> {
    let lo = (center - radius).ceil().max(0.0);
    let hi = (center + radius).floor().min(len as f32 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn project(cloud: &PointCloud, origin: TimeOrigin, t: f32, camera: &Camera, base: f32) -> Vec<Projected> {
    let r = camera.rotation.map(|v| v as f32);
    let tr = camera.translation.map(|v| v as f32);
    let k = camera.intrinsics;
    let (fx, fy, cx, cy) = (k.fx as f32, k.fy as f32, k.cx as f32, k.cy as f32);
    let (w, h) = (camera.width, camera.height);
    let s = origin.step(t);
    (0..cloud.len())
        .into_par_iter()
        .with_min_len(4096)
        .filter_map(|i| {
            let p = displaced(cloud.positions[i], cloud.flows[i], s);
            let z = r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2] + tr[2];
            if !(z > 0.0) || !z.is_finite() {
                return None;
            }
            let xc = r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2] + tr[0];
            let yc = r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2] + tr[1];
            let x = fx * xc / z + cx;
            let y = fy * yc / z + cy;
            let radius = (base * cloud.radius_scales[i] / z).clamp(MIN_RADIUS_PX, MAX_RADIUS_PX);
            if !(x.is_finite() && y.is_finite()) {
                return None;
            }
            pixel_span(x, radius, w)?;
            pixel_span(y, radius, h)?;
            Some(Projected {
                x,
                y,
                z,
                radius,
                color: cloud.colors[i].map(|c| c as f32 / 255.0),
            })
        })
        .collect()
}

/// Tile → point indices in compressed-row form, indices ascending per tile.
fn bin(points: &[Projected], w: usize, h: usize) -> (Vec<usize>, Vec<u32>) {
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);
    let tile_range = |p: &Projected| {
        let (x0, x1) = pixel_span(p.x, p.radius, w).expect("culled during projection");
        let (y0, y1) = pixel_span(p.y, p.radius, h).expect("culled during projection");
        (x0 / TILE_SIZE, x1 / TILE_SIZE, y0 / TILE_SIZE, y1 / TILE_SIZE)
    };
    let mut offsets = vec![0usize; tiles_x * tiles_y + 1];
    for p in points {
        let (tx0, tx1, ty0, ty1) = tile_range(p);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                offsets[ty * tiles_x + tx + 1] += 1;
            }
        }
    }
    for i in 1..offsets.len() {
        offsets[i] += offsets[i - 1];
    }
    let mut cursor = offsets.clone();
    let mut indices = vec![0u32; offsets[offsets.len() - 1]];
    for (i, p) in points.iter().enumerate() {
        let (tx0, tx1, ty0, ty1) = tile_range(p);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let slot = &mut cursor[ty * tiles_x + tx];
                indices[*slot] = i as u32;
                *slot += 1;
            }
        }
    }
    (offsets, indices)
}

/// Per-tile output: normalized RGBA, depth, and total weight.
struct TileOut {
    color: Vec<[f32; 4]>,
    depth: Vec<f32>,
    weight: Vec<f32>,
}

/// Visits every pixel of the tile `[x0, x1) × [y0, y1)` within the point's
/// footprint, passing the local index and squared distance.
#[inline]
fn for_each_covered(p: &Projected, x0: usize, x1: usize, y0: usize, y1: usize, mut f: impl FnMut(usize, f32)) {
    let r2 = p.radius * p.radius;
    let Some((px0, px1)) = pixel_span(p.x, p.radius, x1) else {
        return;
    };
    let Some((py0, py1)) = pixel_span(p.y, p.radius, y1) else {
        return;
    };
    let tw = x1 - x0;
    for py in py0.max(y0)..=py1 {
        let dy = py as f32 - p.y;
        let dy2 = dy * dy;
        if dy2 >= r2 {
            continue;
        }
        let row = (py - y0) * tw;
        for px in px0.max(x0)..=px1 {
            let dx = px as f32 - p.x;
            let d2 = dx * dx + dy2;
            if d2 < r2 {
                f(row + px - x0, d2);
            }
        }
    }
}

fn render_tile(
    points: &[Projected],
    list: &[u32],
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    params: &SplatParams,
) -> TileOut {
    let n = (x1 - x0) * (y1 - y0);
    let mut z_all = vec![f32::INFINITY; n];
    let mut z_core = vec![f32::INFINITY; n];
    for &pi in list {
        let p = &points[pi as usize];
        for_each_covered(p, x0, x1, y0, y1, |k, d2| {
            z_all[k] = z_all[k].min(p.z);
            if d2 <= CORE_RADIUS_SQ {
                z_core[k] = z_core[k].min(p.z);
            }
        });
    }
    let z_ref: Vec<f32> = z_core
        .iter()
        .zip(&z_all)
        .map(|(&c, &a)| if c.is_finite() { c } else { a })
        .collect();

    let mut acc = vec![[0.0f64; 6]; n];
    let (lo, hi) = (1.0 - params.band, 1.0 + params.band);
    for &pi in list {
        let p = &points[pi as usize];
        for_each_covered(p, x0, x1, y0, y1, |k, d2| {
            let zr = z_ref[k];
            if p.z < zr * lo || p.z > zr * hi {
                return;
            }
            let falloff = 1.0 - d2.sqrt() / p.radius;
            let mut wgt = falloff * falloff;
            if p.z != zr {
                wgt *= (-params.alpha_z * (p.z - zr) / zr).exp();
            }
            let wgt = wgt as f64;
            let a = &mut acc[k];
            for c in 0..4 {
                a[c] += wgt * p.color[c] as f64;
            }
            a[4] += wgt * p.z as f64;
            a[5] += wgt;
        });
    }

    let mut out = TileOut {
        color: vec![[0.0; 4]; n],
        depth: vec![0.0; n],
        weight: vec![0.0; n],
    };
    for (k, a) in acc.iter().enumerate() {
        if a[5] > 0.0 {
            out.color[k] = [0, 1, 2, 3].map(|c| (a[c] / a[5]) as f32);
            out.depth[k] = (a[4] / a[5]) as f32;
            out.weight[k] = a[5] as f32;
        }
    }
    out
}

/// Splats `cloud`, displaced to time `t`, into `camera`.
pub fn splat(cloud: &PointCloud, origin: TimeOrigin, t: f32, camera: &Camera, params: &SplatParams) -> SplatBuffers {
    let (w, h) = (camera.width, camera.height);
    let points = project(cloud, origin, t, camera, params.base_radius_px);
    let (offsets, indices) = bin(&points, w, h);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles: Vec<TileOut> = (0..offsets.len() - 1)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (x0, y0) = (tx * TILE_SIZE, ty * TILE_SIZE);
            let (x1, y1) = ((x0 + TILE_SIZE).min(w), (y0 + TILE_SIZE).min(h));
            render_tile(
                &points,
                &indices[offsets[tile]..offsets[tile + 1]],
                x0,
                x1,
                y0,
                y1,
                params,
            )
        })
        .collect();

    let mut color = RgbaMap::new(w, h);
    let mut depth = ScalarMap::new(w, h);
    let mut weight = ScalarMap::new(w, h);
    for (tile, out) in tiles.iter().enumerate() {
        let (x0, y0) = ((tile % tiles_x) * TILE_SIZE, (tile / tiles_x) * TILE_SIZE);
        let (x1, y1) = ((x0 + TILE_SIZE).min(w), (y0 + TILE_SIZE).min(h));
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let k = (y - y0) * tw + (x - x0);
                let i = y * w + x;
                color.set_pixel_at(i, out.color[k]);
                depth.set_pixel_at(i, [out.depth[k]]);
                weight.set_pixel_at(i, [out.weight[k]]);
            }
        }
    }
    SplatBuffers { color, depth, weight }
}
