use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::path::PathSpec;
use crate::align::RansacParams;
use crate::camera::Intrinsics;
use crate::render::RenderParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputPaths {
    pub image0: PathBuf,
    pub image1: PathBuf,
    pub disparity0: PathBuf,
    pub disparity1: PathBuf,
    pub flow01: PathBuf,
    pub flow10: PathBuf,
}

impl InputPaths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.image0,
            &mut self.image1,
            &mut self.disparity0,
            &mut self.disparity1,
            &mut self.flow01,
            &mut self.flow10,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

/// Either explicit pinhole parameters or a horizontal field of view with
/// the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum IntrinsicsSpec {
    Explicit { fx: f64, fy: f64, cx: f64, cy: f64 },
    Fov { fov_deg: f64 },
}

impl Default for IntrinsicsSpec {
    fn default() -> Self {
        IntrinsicsSpec::Fov { fov_deg: 55.0 }
    }
}

impl IntrinsicsSpec {
    pub fn resolve(&self, width: usize, height: usize) -> Intrinsics {
        match *self {
            IntrinsicsSpec::Explicit { fx, fy, cx, cy } => Intrinsics::new(fx, fy, cx, cy),
            IntrinsicsSpec::Fov { fov_deg } => Intrinsics::from_fov(width, height, fov_deg),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignConfig {
    /// Fraction of pixels, by ascending flow magnitude, treated as static.
    pub keep_fraction: f32,
    pub stride: usize,
    pub threshold_px: f64,
    pub max_iterations: usize,
    pub confidence: f64,
    pub min_inlier_ratio: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        let r = RansacParams::default();
        Self {
            keep_fraction: 0.6,
            stride: 4,
            threshold_px: r.threshold_px,
            max_iterations: r.max_iterations,
            confidence: r.confidence,
            min_inlier_ratio: r.min_inlier_ratio,
        }
    }
}

impl AlignConfig {
    pub fn ransac(&self, seed: u64) -> RansacParams {
        RansacParams {
            threshold_px: self.threshold_px,
            max_iterations: self.max_iterations,
            confidence: self.confidence,
            min_inlier_ratio: self.min_inlier_ratio,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LdiConfig {
    /// Single-linkage threshold on min–max normalized disparity.
    pub threshold: f32,
    /// Inpainting margin; defaults to 5% of the smaller image side.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin_px: Option<usize>,
}

impl Default for LdiConfig {
    fn default() -> Self {
        Self {
            threshold: 0.12,
            margin_px: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneFlowConfig {
    pub tau: f32,
}

impl Default for SceneFlowConfig {
    fn default() -> Self {
        Self { tau: 1.0 }
    }
}

/// Everything one pipeline run needs. Relative paths are resolved against
/// the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Write intermediate rasters next to the frames.
    #[serde(default)]
    pub debug: bool,
    /// Also write the scene bundle `scene.ldim`.
    #[serde(default)]
    pub export_bundle: bool,
    pub inputs: InputPaths,
    #[serde(default)]
    pub intrinsics: IntrinsicsSpec,
    #[serde(default)]
    pub align: AlignConfig,
    #[serde(default)]
    pub ldi: LdiConfig,
    #[serde(default)]
    pub scene_flow: SceneFlowConfig,
    #[serde(default)]
    pub render: RenderParams,
    #[serde(default)]
    pub path: PathSpec,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl PipelineConfig {
    /// Defaults for everything but the inputs and output directory.
    pub fn new(inputs: InputPaths, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            output_dir: output_dir.into(),
            seed: 0,
            debug: false,
            export_bundle: false,
            inputs,
            intrinsics: IntrinsicsSpec::default(),
            align: AlignConfig::default(),
            ldi: LdiConfig::default(),
            scene_flow: SceneFlowConfig::default(),
            render: RenderParams::default(),
            path: PathSpec::default(),
        }
    }

    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, toml::de::Error> {
        let mut cfg: Self = toml::from_str(text)?;
        cfg.inputs.resolve(base_dir);
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base_dir.join(&cfg.output_dir);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        let a = &self.align;
        if !(a.keep_fraction > 0.0 && a.keep_fraction < 1.0) {
            return bad(format!(
                "align.keep_fraction must lie in (0, 1), got {}",
                a.keep_fraction
            ));
        }
        if a.stride == 0 {
            return bad("align.stride must be at least 1".into());
        }
        if !(a.threshold_px > 0.0) || !(a.confidence > 0.0 && a.confidence < 1.0) || a.max_iterations == 0 {
            return bad("align RANSAC parameters out of range".into());
        }
        if !(self.ldi.threshold > 0.0 && self.ldi.threshold < 1.0) {
            return bad(format!("ldi.threshold must lie in (0, 1), got {}", self.ldi.threshold));
        }
        if !(self.scene_flow.tau > 0.0 && self.scene_flow.tau.is_finite()) {
            return bad(format!("scene_flow.tau must be positive, got {}", self.scene_flow.tau));
        }
        let r = &self.render;
        if !(r.beta > 0.0 && r.beta.is_finite()) {
            return bad(format!("render.beta must be positive and finite, got {}", r.beta));
        }
        if !(r.base_radius_px > 0.0 && r.base_radius_px.is_finite()) {
            return bad(format!(
                "render.base_radius_px must be positive, got {}",
                r.base_radius_px
            ));
        }
        if !(r.band >= 0.0 && r.band < 1.0) || !(r.alpha_z >= 0.0 && r.alpha_z.is_finite()) {
            return bad("render.band must lie in [0, 1) and render.alpha_z be non-negative".into());
        }
        if let IntrinsicsSpec::Fov { fov_deg } = self.intrinsics {
            if !(fov_deg > 0.0 && fov_deg < 180.0) {
                return bad(format!("intrinsics.fov_deg must lie in (0, 180), got {fov_deg}"));
            }
        }
        self.path.validate().map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::path::{PathKind, TimeSpec};

    const MINIMAL: &str = r#"
[inputs]
image0 = "a.png"
image1 = "b.png"
disparity0 = "a.pfm"
disparity1 = "/abs/b.pfm"
flow01 = "f01.flo"
flow10 = "f10.flo"
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.inputs.image0, PathBuf::from("/data/a.png"));
        assert_eq!(cfg.inputs.disparity1, PathBuf::from("/abs/b.pfm"));
        assert_eq!(cfg.output_dir, PathBuf::from("/data/out"));
        assert_eq!(cfg.intrinsics, IntrinsicsSpec::Fov { fov_deg: 55.0 });
        assert_eq!(cfg.ldi.threshold, 0.12);
        assert_eq!(cfg.scene_flow.tau, 1.0);
        assert_eq!(cfg.render.beta, 10.0);
        assert_eq!(cfg.render.base_radius_px, 1.7);
        assert_eq!(cfg.align.keep_fraction, 0.6);
        cfg.validate().unwrap();
    }

    #[test]
    fn explicit_sections_parse() {
        let text = format!(
            "seed = 7\n{MINIMAL}\n[intrinsics]\nfx = 500.0\nfy = 510.0\ncx = 320.0\ncy = 240.0\n\
             [path]\nkind = \"zoom\"\nframes = 12\namplitude = 0.1\ntime = \"sine-loop\"\n\
             [render]\nbeta = 4.0\n"
        );
        let cfg = PipelineConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(
            cfg.intrinsics.resolve(10, 10),
            Intrinsics::new(500.0, 510.0, 320.0, 240.0)
        );
        assert_eq!(cfg.path.kind, PathKind::Zoom);
        assert_eq!(cfg.path.time, TimeSpec::SineLoop);
        assert_eq!(cfg.render.beta, 4.0);
        assert_eq!(cfg.render.band, 0.05);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = PipelineConfig::from_toml(MINIMAL, Path::new("/data")).unwrap();
        cfg.ldi.margin_px = Some(9);
        let again = PipelineConfig::from_toml(&cfg.to_toml(), Path::new("/elsewhere")).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(PipelineConfig::from_toml(&format!("bogus = 1\n{MINIMAL}"), Path::new(".")).is_err());
        let bad_kind = format!("{MINIMAL}\n[path]\nkind = \"spiral\"\n");
        assert!(PipelineConfig::from_toml(&bad_kind, Path::new(".")).is_err());
        let mut cfg = PipelineConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        cfg.path.frames = 1;
        assert!(cfg.validate().is_err());
        cfg.path.frames = 2;
        cfg.render.beta = 0.0;
        assert!(cfg.validate().is_err());
    }
}
