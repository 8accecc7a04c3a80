use std::f64::consts::TAU;
use std::str::FromStr;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{Camera, Intrinsics};

#[derive(Debug, Error, PartialEq)]
pub enum PathError {
    #[error("unknown camera path kind {0:?} (expected zoom, track, circle, or static)")]
    UnknownKind(String),
    #[error("unknown time schedule {0:?} (expected linear or sine-loop)")]
    UnknownTime(String),
    #[error("a camera path needs at least 2 frames, got {0}")]
    TooFewFrames(usize),
    #[error("path amplitude must be finite and non-negative, got {0}")]
    BadAmplitude(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    /// Dolly forward along the optical axis.
    Zoom,
    /// Slide sideways.
    Track,
    /// One loop around an ellipse in the image plane, twice as wide as tall.
    Circle,
    Static,
}

impl FromStr for PathKind {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zoom" => Ok(PathKind::Zoom),
            "track" => Ok(PathKind::Track),
            "circle" => Ok(PathKind::Circle),
            "static" => Ok(PathKind::Static),
            other => Err(PathError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeSpec {
    /// `t = i / (n − 1)`.
    Linear,
    /// `t = 0.5 − 0.5·cos(2π·i / (n − 1))`: out to the second photo and back.
    SineLoop,
}

impl FromStr for TimeSpec {
    type Err = PathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "linear" => Ok(TimeSpec::Linear),
            "sine-loop" => Ok(TimeSpec::SineLoop),
            other => Err(PathError::UnknownTime(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathSpec {
    pub kind: PathKind,
    pub frames: usize,
    /// Camera excursion in units of the scene's median depth.
    pub amplitude: f64,
    pub time: TimeSpec,
}

impl Default for PathSpec {
    fn default() -> Self {
        Self {
            kind: PathKind::Circle,
            frames: 30,
            amplitude: 0.05,
            time: TimeSpec::Linear,
        }
    }
}

impl PathSpec {
    pub fn validate(&self) -> Result<(), PathError> {
        if self.frames < 2 {
            return Err(PathError::TooFewFrames(self.frames));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(PathError::BadAmplitude(self.amplitude));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathFrame {
    pub camera: Camera,
    pub t: f32,
}

/// Target cameras with their scene times, in frame order.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraPath {
    pub frames: Vec<PathFrame>,
}

/// `3s² − 2s³`.
#[inline]
pub fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Camera positions and times for `spec.frames` frames. Translations are
/// `spec.amplitude · scale`, where `scale` is the scene's median depth. The
/// first camera is always the reference camera.
pub fn generate_path(
    spec: &PathSpec,
    k: Intrinsics,
    width: usize,
    height: usize,
    scale: f64,
) -> Result<CameraPath, PathError> {
    spec.validate()?;
    let n = spec.frames;
    let a = spec.amplitude * scale;
    let frames = (0..n)
        .map(|i| {
            let u = i as f64 / (n - 1) as f64;
            let s = smoothstep(u);
            let center = match spec.kind {
                PathKind::Zoom => Vector3::new(0.0, 0.0, a * s),
                PathKind::Track => Vector3::new(a * s, 0.0, 0.0),
                PathKind::Circle => {
                    let angle = TAU * s;
                    Vector3::new(a * angle.sin(), 0.5 * a * (1.0 - angle.cos()), 0.0)
                }
                PathKind::Static => Vector3::zeros(),
            };
            let t = match spec.time {
                TimeSpec::Linear => u,
                TimeSpec::SineLoop => 0.5 - 0.5 * (TAU * u).cos(),
            };
            PathFrame {
                camera: Camera::at(k, width, height, center),
                t: t.clamp(0.0, 1.0) as f32,
            }
        })
        .collect();
    Ok(CameraPath { frames })
}
