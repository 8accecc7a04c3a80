//! End-to-end orchestration.
//!
//! Preprocessing runs once per photo pair: load, align, build and inpaint
//! both LDIs, attach scene flow, and lift to point clouds. Frames along a
//! camera path are then rendered concurrently from the shared clouds and
//! written as a numbered PNG sequence with a JSON manifest.

mod bundle;
mod config;
mod path;

pub use bundle::{
    bundle_len, decode_bundle, encode_bundle, export_bundle, import_bundle, Bundle, BundleError, BUNDLE_MAGIC,
    BUNDLE_VERSION, HEADER_LEN, RECORD_LEN,
};
pub use config::{AlignConfig, ConfigError, InputPaths, IntrinsicsSpec, LdiConfig, PipelineConfig, SceneFlowConfig};
pub use path::{generate_path, smoothstep, CameraPath, PathError, PathFrame, PathKind, PathSpec, TimeSpec};

use std::error::Error as StdError;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::align::{
    correspondences_from_flow, estimate_homography, fit_disparity_alignment, reexpress_forward_flow, static_mask,
    warp_to_reference, AlignError, DisparityAlignment, Homography,
};
use crate::camera::{Camera, Intrinsics};
use crate::imaging::{self, DisparityMap, FlowField, ImagingError, Mask, RgbMap, RgbaMap};
use crate::ldi::{build_ldi, default_margin, Ldi, LdiError};
use crate::render::{lift_ldi, quantize_color, render_frame, RenderParams, Scene};
use crate::sceneflow::{attach_flow_to_ldi, mutual_check, FlowPair, SceneFlowLdi};

/// Pipeline stages, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Load,
    Align,
    Ldi,
    SceneFlow,
    Render,
    Output,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Config => "config",
            Stage::Load => "load",
            Stage::Align => "align",
            Stage::Ldi => "ldi",
            Stage::SceneFlow => "scene-flow",
            Stage::Render => "render",
            Stage::Output => "output",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Stage::Config => 2,
            Stage::Load => 3,
            Stage::Align => 4,
            Stage::Ldi => 5,
            Stage::SceneFlow => 6,
            Stage::Render => 7,
            Stage::Output => 8,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
#[error("{stage} stage failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn StdError + Send + Sync>,
}

impl PipelineError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn StdError + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.stage.exit_code()
    }
}

/// Tags an error with the stage it aborted.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, PipelineError>;
}

impl<T, E: StdError + Send + Sync + 'static> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError::new(stage, e))
    }
}

fn output_error(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::new(
        Stage::Output,
        ImagingError::Write {
            path: path.to_path_buf(),
            source,
        },
    )
}

fn millis(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// The decoded input files.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub image0: RgbaMap,
    pub image1: RgbaMap,
    pub disparity0: DisparityMap,
    pub disparity1: DisparityMap,
    pub flow01: FlowField,
    pub flow10: FlowField,
}

impl Inputs {
    pub fn dims(&self) -> (usize, usize) {
        self.image0.dims()
    }
}

pub fn load_inputs(paths: &InputPaths) -> Result<Inputs, ImagingError> {
    let image0 = imaging::read_image(&paths.image0)?;
    let dims = image0.dims();
    let image1 = imaging::read_image(&paths.image1)?;
    image1.check_dims("second image", dims)?;
    let disparity0 = imaging::read_disparity(&paths.disparity0)?;
    disparity0.values.check_dims("first disparity", dims)?;
    let disparity1 = imaging::read_disparity(&paths.disparity1)?;
    disparity1.values.check_dims("second disparity", dims)?;
    let flow01 = imaging::read_flow(&paths.flow01)?;
    flow01.check_dims("forward flow", dims)?;
    let flow10 = imaging::read_flow(&paths.flow10)?;
    flow10.check_dims("backward flow", dims)?;
    Ok(Inputs {
        image0,
        image1,
        disparity0,
        disparity1,
        flow01,
        flow10,
    })
}

/// The second photo registered onto the first.
#[derive(Debug, Clone)]
pub struct Alignment {
    /// Maps first-photo pixels to second-photo pixels.
    pub homography: Homography,
    pub disparity_fit: DisparityAlignment,
    /// Static correspondences supporting the fit.
    pub support: usize,
    pub image1: RgbaMap,
    pub valid1: Mask,
    /// Warped and scale/shift-corrected.
    pub disparity1: DisparityMap,
    /// Both flows re-expressed between the first photo and the aligned second.
    pub flow01: FlowField,
    pub flow10: FlowField,
}

impl Alignment {
    /// Writes `aligned_image1.png`, `aligned_disparity1.pfm`,
    /// `aligned_flow{01,10}.flo`, and `alignment.json`.
    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let out = (|| {
            imaging::write_png8(dir.join("aligned_image1.png"), &self.image1)?;
            imaging::write_pfm(dir.join("aligned_disparity1.pfm"), &self.disparity1.values)?;
            imaging::write_flow(dir.join("aligned_flow01.flo"), &self.flow01)?;
            imaging::write_flow(dir.join("aligned_flow10.flo"), &self.flow10)
        })();
        out.at(Stage::Output)?;
        let summary = serde_json::json!({
            "homography": self.homography.to_rows(),
            "disparity_scale": self.disparity_fit.scale,
            "disparity_shift": self.disparity_fit.shift,
            "static_support": self.support,
        });
        let path = dir.join("alignment.json");
        std::fs::write(&path, serde_json::to_string_pretty(&summary).expect("json")).map_err(|e| output_error(&path, e))
    }
}

/// Fits the homography and disparity correction on pixels that are both
/// among the slowest moving and forward-backward consistent within `tau`.
pub fn align_inputs(inputs: &Inputs, cfg: &AlignConfig, tau: f32, seed: u64) -> Result<Alignment, PipelineError> {
    let (consistent, _) = mutual_check(&inputs.flow01, &inputs.flow10, tau).at(Stage::Align)?;
    let mask = static_mask(&inputs.flow01, cfg.keep_fraction)
        .at(Stage::Align)?
        .intersection(&consistent);
    fit_alignment(inputs, cfg, &mask, seed).at(Stage::Align)
}

fn fit_alignment(inputs: &Inputs, cfg: &AlignConfig, mask: &Mask, seed: u64) -> Result<Alignment, AlignError> {
    let corrs = correspondences_from_flow(&inputs.flow01, mask, cfg.stride)?;
    let homography = estimate_homography(&corrs, &cfg.ransac(seed))?;
    let frame = warp_to_reference(&inputs.image1, &inputs.disparity1, &inputs.flow10, &homography);
    let flow01 = reexpress_forward_flow(&inputs.flow01, &homography);
    let aligned_corrs = correspondences_from_flow(&flow01, mask, cfg.stride)?;
    let disparity_fit = fit_disparity_alignment(&inputs.disparity0, &frame.disparity, &aligned_corrs)?;
    log::info!(
        "homography from {} correspondences; disparity scale {} shift {}",
        corrs.len(),
        disparity_fit.scale,
        disparity_fit.shift
    );
    Ok(Alignment {
        homography,
        disparity_fit,
        support: corrs.len(),
        disparity1: disparity_fit.apply(&frame.disparity),
        image1: frame.image,
        valid1: frame.valid,
        flow01,
        flow10: frame.flow10,
    })
}

/// Layered depth images for the first photo and the aligned second photo.
pub fn build_ldis(inputs: &Inputs, alignment: &Alignment, cfg: &LdiConfig) -> Result<(Ldi, Ldi), LdiError> {
    let (w, h) = inputs.dims();
    let margin = cfg.margin_px.unwrap_or_else(|| default_margin(w, h));
    let (a, b) = rayon::join(
        || build_ldi(&inputs.image0, &inputs.disparity0, cfg.threshold, margin),
        || build_ldi(&alignment.image1, &alignment.disparity1, cfg.threshold, margin),
    );
    Ok((a?, b?))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PreprocessTimings {
    pub load_ms: f64,
    pub align_ms: f64,
    pub ldi_ms: f64,
    pub scene_flow_ms: f64,
    pub lift_ms: f64,
    pub total_ms: f64,
}

/// Everything computed once per photo pair.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    pub inputs: Inputs,
    pub alignment: Alignment,
    pub pair: FlowPair,
    pub ldi0: SceneFlowLdi,
    pub ldi1: SceneFlowLdi,
    pub scene: Scene,
    pub timings: PreprocessTimings,
}

/// Runs every stage up to and including point-cloud lifting. With
/// `cfg.debug`, LDI and scene-flow rasters are written to the output
/// directory, which must exist.
pub fn preprocess(cfg: &PipelineConfig) -> Result<Preprocessed, PipelineError> {
    let start = Instant::now();
    let mut timings = PreprocessTimings::default();

    let t = Instant::now();
    let inputs = load_inputs(&cfg.inputs).at(Stage::Load)?;
    let (width, height) = inputs.dims();
    let k = cfg.intrinsics.resolve(width, height);
    k.validate().at(Stage::Config)?;
    timings.load_ms = millis(t);

    let t = Instant::now();
    let alignment = align_inputs(&inputs, &cfg.align, cfg.scene_flow.tau, cfg.seed)?;
    timings.align_ms = millis(t);

    let t = Instant::now();
    let (ldi0, ldi1) = build_ldis(&inputs, &alignment, &cfg.ldi).at(Stage::Ldi)?;
    timings.ldi_ms = millis(t);
    log::info!("LDI layers: {} and {}", ldi0.layer_count(), ldi1.layer_count());

    let t = Instant::now();
    let pair =
        FlowPair::new(alignment.flow01.clone(), alignment.flow10.clone(), cfg.scene_flow.tau).at(Stage::SceneFlow)?;
    let (sf0, sf1) =
        attach_flow_to_ldi(&ldi0, &ldi1, &pair, &inputs.disparity0, &alignment.disparity1, &k).at(Stage::SceneFlow)?;
    timings.scene_flow_ms = millis(t);

    let t = Instant::now();
    let (p0, p1) = rayon::join(|| lift_ldi(&sf0, &k), || lift_ldi(&sf1, &k));
    let scene = Scene::new(p0.at(Stage::Render)?, p1.at(Stage::Render)?);
    timings.lift_ms = millis(t);
    timings.total_ms = millis(start);
    log::info!("point clouds: {} + {} points", scene.p0.len(), scene.p1.len());

    if cfg.debug {
        let dir = &cfg.output_dir;
        let dump = (|| {
            sf0.ldi.write_debug(dir, "0")?;
            sf1.ldi.write_debug(dir, "1")?;
            sf0.write_debug(dir, "0")?;
            sf1.write_debug(dir, "1")
        })();
        dump.at(Stage::Output)?;
    }

    Ok(Preprocessed {
        intrinsics: k,
        width,
        height,
        inputs,
        alignment,
        pair,
        ldi0: sf0,
        ldi1: sf1,
        scene,
        timings,
    })
}

/// Images and masks for scoring frames rendered from the reference camera
/// at either endpoint time.
#[derive(Debug, Clone)]
pub struct EndpointReferences {
    pub image0: RgbaMap,
    pub mask0: Mask,
    pub image1: RgbaMap,
    pub mask1: Mask,
}

impl EndpointReferences {
    /// Scores time 0 against the first photo on mutually consistent pixels
    /// and time 1 against the aligned second photo on its mutually
    /// consistent, validly warped pixels.
    pub fn from_preprocessed(pre: &Preprocessed) -> Self {
        Self {
            image0: pre.inputs.image0.clone(),
            mask0: pre.pair.mutual01.clone(),
            image1: pre.alignment.image1.clone(),
            mask1: pre.pair.mutual10.intersection(&pre.alignment.valid1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameRecord {
    pub index: usize,
    pub file: String,
    pub t: f32,
    pub camera_center: [f64; 3],
    /// PSNR in dB of the written frame against the first photo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_image0: Option<f64>,
    /// PSNR in dB of the written frame against the aligned second photo.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_image1: Option<f64>,
    #[serde(skip)]
    pub render_ms: f64,
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.png")
}

fn is_reference_pose(camera: &Camera) -> bool {
    camera.rotation == nalgebra::Matrix3::identity() && camera.translation.iter().all(|&v| v == 0.0)
}

/// Frame values as they are stored in the 8-bit PNG.
fn as_written(image: &RgbMap) -> RgbMap {
    image.map(|p| p.map(|v| quantize_color(v) as f32 / 255.0))
}

/// Renders and writes every frame of `path` into `out_dir`.
pub fn render_path(
    scene: &Scene,
    path: &CameraPath,
    params: &RenderParams,
    out_dir: &Path,
    debug: bool,
    references: Option<&EndpointReferences>,
) -> Result<Vec<FrameRecord>, PipelineError> {
    path.frames
        .par_iter()
        .enumerate()
        .map(|(index, frame)| {
            let start = Instant::now();
            let rendered = render_frame(scene, &frame.camera, frame.t, params).at(Stage::Render)?;
            let render_ms = millis(start);
            let file = frame_file_name(index);
            imaging::write_png8(out_dir.join(&file), &rendered.image).at(Stage::Output)?;
            if debug {
                rendered.write_debug(out_dir, index).at(Stage::Output)?;
            }
            let mut record = FrameRecord {
                index,
                file,
                t: frame.t,
                camera_center: frame.camera.center().into(),
                psnr_image0: None,
                psnr_image1: None,
                render_ms,
            };
            if let Some(r) = references.filter(|_| is_reference_pose(&frame.camera)) {
                let written = as_written(&rendered.image);
                if frame.t == 0.0 {
                    record.psnr_image0 = Some(imaging::psnr(&written, &r.image0, 3, Some(&r.mask0)));
                }
                if frame.t == 1.0 {
                    record.psnr_image1 = Some(imaging::psnr(&written, &r.image1, 3, Some(&r.mask1)));
                }
            }
            Ok(record)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenderTimings {
    pub frames_ms: Vec<f64>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneSummary {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homography: Option<[[f64; 3]; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disparity_fit: Option<DisparityAlignment>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<[usize; 2]>,
    pub points: [usize; 2],
    pub median_depth: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestTimings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preprocessing: Option<PreprocessTimings>,
    pub render: RenderTimings,
}

/// The run record written as `manifest.json`. Everything except `timings`
/// is a deterministic function of the configuration and inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub version: u32,
    pub params: serde_json::Value,
    pub scene: SceneSummary,
    pub frames: Vec<FrameRecord>,
    pub timings: ManifestTimings,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf, PipelineError> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text + "\n").map_err(|e| output_error(&path, e))?;
        Ok(path)
    }
}

fn render_timings(frames: &[FrameRecord], start: Instant) -> RenderTimings {
    RenderTimings {
        frames_ms: frames.iter().map(|f| f.render_ms).collect(),
        total_ms: millis(start),
    }
}

pub fn create_output_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| output_error(dir, e))
}

/// Runs everything and writes frames, the manifest, and optionally the
/// bundle into `cfg.output_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<Manifest, PipelineError> {
    cfg.validate().at(Stage::Config)?;
    create_output_dir(&cfg.output_dir)?;
    let pre = preprocess(cfg)?;
    let path = generate_path(
        &cfg.path,
        pre.intrinsics,
        pre.width,
        pre.height,
        pre.scene.median_depth as f64,
    )
    .at(Stage::Config)?;

    let start = Instant::now();
    let references = EndpointReferences::from_preprocessed(&pre);
    let frames = render_path(
        &pre.scene,
        &path,
        &cfg.render,
        &cfg.output_dir,
        cfg.debug,
        Some(&references),
    )?;
    let render = render_timings(&frames, start);

    if cfg.export_bundle {
        export_bundle(
            &cfg.output_dir.join("scene.ldim"),
            &pre.intrinsics,
            &pre.scene.p0,
            &pre.scene.p1,
        )
        .at(Stage::Output)?;
    }

    let manifest = Manifest {
        version: 1,
        params: serde_json::to_value(cfg).expect("config serializes"),
        scene: SceneSummary {
            width: pre.width,
            height: pre.height,
            intrinsics: pre.intrinsics,
            homography: Some(pre.alignment.homography.to_rows()),
            disparity_fit: Some(pre.alignment.disparity_fit),
            layers: Some([pre.ldi0.ldi.layer_count(), pre.ldi1.ldi.layer_count()]),
            points: [pre.scene.p0.len(), pre.scene.p1.len()],
            median_depth: pre.scene.median_depth,
        },
        frames,
        timings: ManifestTimings {
            preprocessing: Some(pre.timings.clone()),
            render,
        },
    };
    manifest.write(&cfg.output_dir)?;
    Ok(manifest)
}

/// Renders a camera path from a decoded bundle into `out_dir`, with a
/// manifest. The image size defaults to the one implied by a centered
/// principal point.
pub fn render_bundle(
    bundle: &Bundle,
    size: Option<(usize, usize)>,
    spec: &PathSpec,
    params: &RenderParams,
    out_dir: &Path,
    debug: bool,
) -> Result<Manifest, PipelineError> {
    let k = bundle.intrinsics();
    k.validate().at(Stage::Config)?;
    let (width, height) = size.unwrap_or((
        (2.0 * k.cx + 1.0).round().max(1.0) as usize,
        (2.0 * k.cy + 1.0).round().max(1.0) as usize,
    ));
    create_output_dir(out_dir)?;
    let scene = Scene::new(bundle.p0.clone(), bundle.p1.clone());
    let path = generate_path(spec, k, width, height, scene.median_depth as f64).at(Stage::Config)?;
    let start = Instant::now();
    let frames = render_path(&scene, &path, params, out_dir, debug, None)?;
    let render = render_timings(&frames, start);
    let manifest = Manifest {
        version: 1,
        params: serde_json::json!({ "path": spec, "render": params }),
        scene: SceneSummary {
            width,
            height,
            intrinsics: k,
            homography: None,
            disparity_fit: None,
            layers: None,
            points: [scene.p0.len(), scene.p1.len()],
            median_depth: scene.median_depth,
        },
        frames,
        timings: ManifestTimings {
            preprocessing: None,
            render,
        },
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}
