//! Pinhole intrinsics and rigid target cameras.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CameraError {
    #[error("focal lengths must be positive, got fx={fx}, fy={fy}")]
    NonPositiveFocal { fx: f64, fy: f64 },
    #[error("rotation is not orthonormal (deviation {0:e})")]
    NonOrthonormal(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self { fx, fy, cx, cy }
    }

    /// Square-pixel pinhole with the given horizontal field of view and the
    /// principal point at the image center.
    pub fn from_fov(width: usize, height: usize, horizontal_fov_deg: f64) -> Self {
        let half = (horizontal_fov_deg.to_radians() * 0.5).tan();
        let f = width as f64 * 0.5 / half;
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) * 0.5,
            cy: (height as f64 - 1.0) * 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        if self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite() {
            Ok(())
        } else {
            Err(CameraError::NonPositiveFocal {
                fx: self.fx,
                fy: self.fy,
            })
        }
    }

    /// `z · K⁻¹ · (x, y, 1)`.
    #[inline]
    pub fn unproject(&self, x: f64, y: f64, depth: f64) -> Point3<f64> {
        Point3::new(depth * (x - self.cx) / self.fx, depth * (y - self.cy) / self.fy, depth)
    }

    /// Perspective projection to pixel coordinates. Requires `p.z > 0`.
    #[inline]
    pub fn project(&self, p: &Point3<f64>) -> (f64, f64) {
        (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// A target viewpoint: world→camera rigid transform `x_cam = R·x + T`.
///
/// The world frame is the reference (input) camera, so the identity pose
/// reproduces the input viewpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn identity(intrinsics: Intrinsics, width: usize, height: usize) -> Self {
        Self {
            intrinsics,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            width,
            height,
        }
    }

    /// Camera with identity orientation whose center sits at `center` in the
    /// reference frame.
    pub fn at(intrinsics: Intrinsics, width: usize, height: usize, center: Vector3<f64>) -> Self {
        Self {
            translation: -center,
            ..Self::identity(intrinsics, width, height)
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics.validate()?;
        let deviation = (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max();
        if deviation > 1e-6 || !deviation.is_finite() {
            return Err(CameraError::NonOrthonormal(deviation));
        }
        Ok(())
    }

    #[inline]
    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}
