//! `moments`: turn a pair of near-duplicate photos into a short
//! space-time video.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use moments_core::pipeline::{
    self, align_inputs, build_ldis, create_output_dir, export_bundle, import_bundle, load_inputs, preprocess,
    render_bundle, run_pipeline, AtStage, InputPaths, IntrinsicsSpec, PathKind, PathSpec, PipelineConfig,
    PipelineError, Stage, TimeSpec,
};
use moments_core::render::RenderParams;

#[derive(Parser)]
#[command(
    name = "moments",
    version,
    about = "Render space-time videos from near-duplicate photo pairs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write frames plus a manifest.
    Pipeline(ConfigArgs),
    /// Register the second photo onto the first and write the aligned inputs.
    Align(ConfigArgs),
    /// Build both layered depth images and write their layers.
    BuildLdi(ConfigArgs),
    /// Preprocess and write the scene bundle.
    ExportBundle {
        #[command(flatten)]
        config: ConfigArgs,
        /// Bundle path; defaults to `scene.ldim` in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render frames from a config, or from a bundle with `--bundle`.
    Render {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        bundle: Option<PathBuf>,
        /// Frame width when rendering a bundle.
        #[arg(long, requires = "bundle")]
        width: Option<usize>,
        /// Frame height when rendering a bundle.
        #[arg(long, requires = "bundle")]
        height: Option<usize>,
    },
}

/// `--config` plus overrides, one per config key.
#[derive(Args)]
struct ConfigArgs {
    /// TOML config file; relative paths inside resolve against its directory.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    image0: Option<PathBuf>,
    #[arg(long)]
    image1: Option<PathBuf>,
    #[arg(long)]
    disparity0: Option<PathBuf>,
    #[arg(long)]
    disparity1: Option<PathBuf>,
    #[arg(long)]
    flow01: Option<PathBuf>,
    #[arg(long)]
    flow10: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write intermediate rasters next to the outputs.
    #[arg(long)]
    debug: bool,
    /// Also write `scene.ldim` when running the pipeline.
    #[arg(long)]
    export_bundle: bool,
    /// Horizontal field of view with a centered principal point.
    #[arg(long, conflicts_with = "fx")]
    fov_deg: Option<f64>,
    #[arg(long, requires_all = ["fy", "cx", "cy"])]
    fx: Option<f64>,
    #[arg(long, requires = "fx")]
    fy: Option<f64>,
    #[arg(long, requires = "fx")]
    cx: Option<f64>,
    #[arg(long, requires = "fx")]
    cy: Option<f64>,
    #[arg(long)]
    keep_fraction: Option<f32>,
    #[arg(long)]
    stride: Option<usize>,
    /// Depth clustering threshold on normalized disparity.
    #[arg(long)]
    threshold: Option<f32>,
    #[arg(long)]
    margin_px: Option<usize>,
    /// Forward-backward flow consistency tolerance in pixels.
    #[arg(long)]
    tau: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    #[arg(long)]
    base_radius_px: Option<f32>,
    #[arg(long)]
    band: Option<f32>,
    #[arg(long)]
    alpha_z: Option<f32>,
    /// zoom, track, circle, or static.
    #[arg(long)]
    path_kind: Option<PathKind>,
    #[arg(long)]
    frames: Option<usize>,
    /// Camera excursion as a fraction of the median scene depth.
    #[arg(long)]
    amplitude: Option<f64>,
    /// linear or sine-loop.
    #[arg(long)]
    time: Option<TimeSpec>,
}

fn missing(flag: &str) -> PipelineError {
    PipelineError::new(
        Stage::Config,
        pipeline::ConfigError::Invalid(format!("--{flag} is required without --config")),
    )
}

impl ConfigArgs {
    fn apply_render(&self, render: &mut RenderParams, path: &mut PathSpec) {
        set(&mut render.beta, self.beta);
        set(&mut render.base_radius_px, self.base_radius_px);
        set(&mut render.band, self.band);
        set(&mut render.alpha_z, self.alpha_z);
        set(&mut path.kind, self.path_kind);
        set(&mut path.frames, self.frames);
        set(&mut path.amplitude, self.amplitude);
        set(&mut path.time, self.time);
    }

    fn resolve(&self) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path).at(Stage::Config)?,
            None => {
                let need = |v: &Option<PathBuf>, flag| v.clone().ok_or_else(|| missing(flag));
                let inputs = InputPaths {
                    image0: need(&self.image0, "image0")?,
                    image1: need(&self.image1, "image1")?,
                    disparity0: need(&self.disparity0, "disparity0")?,
                    disparity1: need(&self.disparity1, "disparity1")?,
                    flow01: need(&self.flow01, "flow01")?,
                    flow10: need(&self.flow10, "flow10")?,
                };
                PipelineConfig::new(inputs, "out")
            }
        };
        let inputs = &mut cfg.inputs;
        for (slot, value) in [
            (&mut inputs.image0, &self.image0),
            (&mut inputs.image1, &self.image1),
            (&mut inputs.disparity0, &self.disparity0),
            (&mut inputs.disparity1, &self.disparity1),
            (&mut inputs.flow01, &self.flow01),
            (&mut inputs.flow10, &self.flow10),
        ] {
            set(slot, value.clone());
        }
        set(&mut cfg.output_dir, self.output_dir.clone());
        set(&mut cfg.seed, self.seed);
        cfg.debug |= self.debug;
        cfg.export_bundle |= self.export_bundle;
        if let Some(fov_deg) = self.fov_deg {
            cfg.intrinsics = IntrinsicsSpec::Fov { fov_deg };
        }
        if let (Some(fx), Some(fy), Some(cx), Some(cy)) = (self.fx, self.fy, self.cx, self.cy) {
            cfg.intrinsics = IntrinsicsSpec::Explicit { fx, fy, cx, cy };
        }
        set(&mut cfg.align.keep_fraction, self.keep_fraction);
        set(&mut cfg.align.stride, self.stride);
        set(&mut cfg.ldi.threshold, self.threshold);
        if self.margin_px.is_some() {
            cfg.ldi.margin_px = self.margin_px;
        }
        set(&mut cfg.scene_flow.tau, self.tau);
        self.apply_render(&mut cfg.render, &mut cfg.path);
        cfg.validate().at(Stage::Config)?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(command: Command) -> Result<(), PipelineError> {
    match command {
        Command::Pipeline(args) => {
            let cfg = args.resolve()?;
            let manifest = run_pipeline(&cfg)?;
            for f in manifest
                .frames
                .iter()
                .filter(|f| f.psnr_image0.is_some() || f.psnr_image1.is_some())
            {
                let psnr = f.psnr_image0.or(f.psnr_image1).unwrap_or_default();
                log::info!("frame {} at t = {}: PSNR {psnr:.2} dB", f.index, f.t);
            }
            println!("wrote {} frames to {}", manifest.frames.len(), cfg.output_dir.display());
        }
        Command::Align(args) => {
            let cfg = args.resolve()?;
            create_output_dir(&cfg.output_dir)?;
            let inputs = load_inputs(&cfg.inputs).at(Stage::Load)?;
            let alignment = align_inputs(&inputs, &cfg.align, cfg.scene_flow.tau, cfg.seed)?;
            alignment.write(&cfg.output_dir)?;
            println!("wrote aligned inputs to {}", cfg.output_dir.display());
        }
        Command::BuildLdi(args) => {
            let cfg = args.resolve()?;
            create_output_dir(&cfg.output_dir)?;
            let inputs = load_inputs(&cfg.inputs).at(Stage::Load)?;
            let alignment = align_inputs(&inputs, &cfg.align, cfg.scene_flow.tau, cfg.seed)?;
            let (ldi0, ldi1) = build_ldis(&inputs, &alignment, &cfg.ldi).at(Stage::Ldi)?;
            ldi0.write_debug(&cfg.output_dir, "0").at(Stage::Output)?;
            ldi1.write_debug(&cfg.output_dir, "1").at(Stage::Output)?;
            println!(
                "wrote {} + {} layers to {}",
                ldi0.layer_count(),
                ldi1.layer_count(),
                cfg.output_dir.display()
            );
        }
        Command::ExportBundle { config, out } => {
            let cfg = config.resolve()?;
            create_output_dir(&cfg.output_dir)?;
            let pre = preprocess(&cfg)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("scene.ldim"));
            export_bundle(&out, &pre.intrinsics, &pre.scene.p0, &pre.scene.p1).at(Stage::Output)?;
            println!(
                "wrote {} + {} points to {}",
                pre.scene.p0.len(),
                pre.scene.p1.len(),
                out.display()
            );
        }
        Command::Render {
            config,
            bundle: Some(bundle),
            width,
            height,
        } => {
            let bundle = import_bundle(&bundle).at(Stage::Load)?;
            let mut params = RenderParams::default();
            let mut path = PathSpec::default();
            config.apply_render(&mut params, &mut path);
            path.validate().at(Stage::Config)?;
            let out = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
            let size = width.zip(height);
            let manifest = render_bundle(&bundle, size, &path, &params, &out, config.debug)?;
            println!("wrote {} frames to {}", manifest.frames.len(), out.display());
        }
        Command::Render { config, .. } => {
            let cfg = config.resolve()?;
            let manifest = run_pipeline(&cfg)?;
            println!("wrote {} frames to {}", manifest.frames.len(), cfg.output_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli.command) {
        Ok(()) => {
            log::info!("done in {:.2} s", start.elapsed().as_secs_f64());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&*err.source);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
