//! Analytic two-plane photo pairs with exact disparity and flow.
//!
//! A smoothly textured, tilted background plane sits behind a textured
//! fronto-parallel rectangle. Between the photos the camera shakes by an
//! integer pixel translation and the rectangle moves by an integer offset.
//! The second photo's disparity is an affine distortion of the true one.
//! Colors are 8-bit exact so the scene survives a PNG round trip.

use std::path::{Path, PathBuf};

use crate::imaging::{self, FlowField, ImagingError, Mask, RgbaMap, ScalarMap};

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPlaneScene {
    pub width: usize,
    pub height: usize,
    /// Camera shake: a first-photo pixel `p` of static content appears at
    /// `p + shift` in the second photo.
    pub shift: [i32; 2],
    /// Rectangle motion between the photos, in the first photo's frame.
    pub motion: [i32; 2],
    /// Rectangle `[x0, y0, width, height]` in the first photo.
    pub rect: [usize; 4],
    /// When set, the foreground is a checkerboard of square tiles of this
    /// size instead of the rectangle.
    pub checker_tile: Option<usize>,
    /// Background depth at the vertical center.
    pub background_depth: f32,
    /// Relative background disparity change from top to bottom.
    pub background_tilt: f32,
    pub foreground_depth: f32,
    /// Second-photo disparity is `scale / depth + offset`.
    pub disparity_distortion: [f32; 2],
}

/// In-memory inputs for one photo pair.
#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub image0: RgbaMap,
    pub image1: RgbaMap,
    pub disparity0: ScalarMap,
    pub disparity1: ScalarMap,
    pub flow01: FlowField,
    pub flow10: FlowField,
}

/// Input file locations written by [`TwoPlaneScene::write`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenInputs {
    pub image0: PathBuf,
    pub image1: PathBuf,
    pub disparity0: PathBuf,
    pub disparity1: PathBuf,
    pub flow01: PathBuf,
    pub flow10: PathBuf,
}

fn q8(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn background(x: f32, y: f32) -> [f32; 4] {
    [
        q8(0.5 + 0.3 * (0.07 * x + 0.03 * y).sin()),
        q8(0.5 + 0.3 * (0.05 * y - 0.02 * x + 1.0).sin()),
        q8(0.4 + 0.2 * (0.04 * x + 0.06 * y).cos()),
        1.0,
    ]
}

fn foreground(u: f32, v: f32) -> [f32; 4] {
    [
        q8(0.8 + 0.15 * (0.09 * u).sin()),
        q8(0.3 + 0.2 * (0.08 * v + 0.5).cos()),
        q8(0.2 + 0.15 * (0.06 * (u + v)).sin()),
        1.0,
    ]
}

impl TwoPlaneScene {
    /// Moving rectangle over a shaken background.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            shift: [3, 2],
            motion: [10, 4],
            rect: [width * 3 / 10, height * 3 / 10, width * 3 / 10, height * 7 / 20],
            checker_tile: None,
            background_depth: 4.0,
            background_tilt: 0.4,
            foreground_depth: 2.0,
            disparity_distortion: [0.8, 0.02],
        }
    }

    /// Identical photos: no shake, no motion, undistorted disparity.
    pub fn still(width: usize, height: usize) -> Self {
        Self {
            shift: [0, 0],
            motion: [0, 0],
            disparity_distortion: [1.0, 0.0],
            ..Self::new(width, height)
        }
    }

    /// Half of the frame is foreground in tiles small enough that every
    /// background pixel behind them gets inpainted.
    pub fn checkerboard(width: usize, height: usize, tile: usize) -> Self {
        Self {
            checker_tile: Some(tile.max(1)),
            ..Self::new(width, height)
        }
    }

    fn in_rect(&self, x: i64, y: i64, time: i64) -> bool {
        let (x, y) = (x - time * self.motion[0] as i64, y - time * self.motion[1] as i64);
        if let Some(tile) = self.checker_tile {
            let tile = tile as i64;
            return (x.div_euclid(tile) + y.div_euclid(tile)).rem_euclid(2) == 1;
        }
        let [rx, ry, rw, rh] = self.rect.map(|v| v as i64);
        x >= rx && x < rx + rw && y >= ry && y < ry + rh
    }

    /// Color and depth at aligned pixel `(x, y)` at time 0 or 1.
    fn aligned(&self, x: i64, y: i64, time: i64) -> ([f32; 4], f32) {
        if self.in_rect(x, y, time) {
            let origin = if self.checker_tile.is_some() {
                [0, 0]
            } else {
                [self.rect[0], self.rect[1]]
            };
            let u = (x - origin[0] as i64 - time * self.motion[0] as i64) as f32;
            let v = (y - origin[1] as i64 - time * self.motion[1] as i64) as f32;
            (foreground(u, v), self.foreground_depth)
        } else {
            let v = y as f32 / self.height as f32 - 0.5;
            let d = (1.0 + self.background_tilt * v) / self.background_depth;
            (background(x as f32, y as f32), 1.0 / d)
        }
    }

    /// Foreground mask of the first photo.
    pub fn foreground_mask(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| self.in_rect(x as i64, y as i64, 0))
    }

    pub fn generate(&self) -> SyntheticPair {
        let (w, h) = (self.width, self.height);
        let [sx, sy] = self.shift.map(|v| v as i64);
        let [mx, my] = self.motion.map(|v| v as f32);
        let [a, b] = self.disparity_distortion;
        // Second-photo pixel q shows aligned pixel q − shift.
        let back = |x: usize, y: usize| (x as i64 - sx, y as i64 - sy);
        SyntheticPair {
            image0: RgbaMap::from_fn(w, h, |x, y| self.aligned(x as i64, y as i64, 0).0),
            image1: RgbaMap::from_fn(w, h, |x, y| {
                let (ax, ay) = back(x, y);
                self.aligned(ax, ay, 1).0
            }),
            disparity0: ScalarMap::from_fn(w, h, |x, y| [1.0 / self.aligned(x as i64, y as i64, 0).1]),
            disparity1: ScalarMap::from_fn(w, h, |x, y| {
                let (ax, ay) = back(x, y);
                [a / self.aligned(ax, ay, 1).1 + b]
            }),
            flow01: FlowField::from_fn(w, h, |x, y| {
                let moving = self.in_rect(x as i64, y as i64, 0);
                let m = if moving { [mx, my] } else { [0.0, 0.0] };
                [sx as f32 + m[0], sy as f32 + m[1]]
            }),
            flow10: FlowField::from_fn(w, h, |x, y| {
                let (ax, ay) = back(x, y);
                let m = if self.in_rect(ax, ay, 1) { [mx, my] } else { [0.0, 0.0] };
                [-(sx as f32) - m[0], -(sy as f32) - m[1]]
            }),
        }
    }

    /// Writes `image{0,1}.png`, `disparity{0,1}.pfm`, and `flow{01,10}.flo`
    /// into `dir`.
    pub fn write(&self, dir: &Path) -> Result<WrittenInputs, ImagingError> {
        let pair = self.generate();
        let paths = WrittenInputs {
            image0: dir.join("image0.png"),
            image1: dir.join("image1.png"),
            disparity0: dir.join("disparity0.pfm"),
            disparity1: dir.join("disparity1.pfm"),
            flow01: dir.join("flow01.flo"),
            flow10: dir.join("flow10.flo"),
        };
        imaging::write_png8(&paths.image0, &pair.image0)?;
        imaging::write_png8(&paths.image1, &pair.image1)?;
        imaging::write_pfm(&paths.disparity0, &pair.disparity0)?;
        imaging::write_pfm(&paths.disparity1, &pair.disparity1)?;
        imaging::write_flow(&paths.flow01, &pair.flow01)?;
        imaging::write_flow(&paths.flow10, &pair.flow10)?;
        Ok(paths)
    }
}
