//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use moments_core::align::{estimate_homography, CorrespondenceSet, Homography, RansacParams};
use moments_core::imaging::{psnr, DisparityMap, Mask, RgbaMap, ScalarMap};
use moments_core::ldi::{build_ldi, cluster_disparity, cluster_values, default_margin, Ldi, MAX_LAYERS};
use moments_core::pipeline::{
    generate_path, preprocess, run_pipeline, InputPaths, PathKind, PipelineConfig, Preprocessed, TimeSpec,
};
use moments_core::render::{blend_weight, render_frame, splat, TimeOrigin};
use moments_core::synthetic::TwoPlaneScene;

type Verdict = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config_for(scene: &TwoPlaneScene, dir: &Path) -> PipelineConfig {
    std::fs::create_dir_all(dir).unwrap();
    let w = scene.write(dir).expect("synthetic inputs written");
    PipelineConfig::new(
        InputPaths {
            image0: w.image0,
            image1: w.image1,
            disparity0: w.disparity0,
            disparity1: w.disparity1,
            flow01: w.flow01,
            flow10: w.flow10,
        },
        dir.join("out"),
    )
}

/// Direct evaluation of the blend weight from its defining ratio.
fn weight_oracle(t: f64, beta: f64, d0: f64, d1: f64) -> f64 {
    let a = (1.0 - t) * (-beta * d0).exp();
    let b = t * (-beta * d1).exp();
    a / (a + b)
}

fn blend_weight_oracle() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut max_err = 0.0f64;
    for i in 0..1000 {
        let t: f64 = rng.random_range(0.0..=1.0);
        let beta: f64 = rng.random_range(0.01..10.0);
        let d0: f64 = rng.random_range(0.1..2.0);
        let d1: f64 = rng.random_range(0.1..2.0);
        let w = blend_weight(t, beta, d0, d1);
        max_err = max_err.max((w - weight_oracle(t, beta, d0, d1)).abs());
        if !(0.0..=1.0).contains(&w) {
            return Err(format!("tuple {i}: W = {w} out of [0, 1]"));
        }
        if blend_weight(0.0, beta, d0, d1) != 1.0 || blend_weight(1.0, beta, d0, d1) != 0.0 {
            return Err(format!("tuple {i}: endpoints not 1 and 0"));
        }
        if (d0 <= d1) != (w >= 1.0 - t) {
            return Err(format!(
                "tuple {i}: D0 <= D1 is {} but W >= 1 - t is {}",
                d0 <= d1,
                w >= 1.0 - t
            ));
        }
        // Strictly decreasing in t on the open interval.
        let (a, b) = (rng.random_range(1e-3..0.999), rng.random_range(1e-3..0.999));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        if hi - lo > 1e-6 && !(blend_weight(lo, beta, d0, d1) > blend_weight(hi, beta, d0, d1)) {
            return Err(format!("tuple {i}: not decreasing between t = {lo} and {hi}"));
        }
    }
    let worked = blend_weight(0.25, 1.0, 1.0, 2.0);
    let secs = start.elapsed().as_secs_f64();
    ensure(
        max_err <= 1e-6 && (worked - 0.89077).abs() <= 1e-5 && secs < 1.0,
        format!("max |W - oracle| = {max_err:.1e}, W(0.25, 1, 1, 2) = {worked:.6}, {secs:.3} s"),
    )
}

fn endpoint_reconstruction(dir: &Path) -> Verdict {
    let mut cfg = config_for(&TwoPlaneScene::new(768, 576), dir);
    cfg.path.kind = PathKind::Static;
    cfg.path.frames = 2;
    cfg.path.time = TimeSpec::Linear;
    let start = Instant::now();
    let manifest = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let p0 = manifest.frames[0].psnr_image0.ok_or("frame 0 not scored")?;
    let p1 = manifest.frames[1].psnr_image1.ok_or("frame 1 not scored")?;
    ensure(
        p0 > 35.0 && p1 > 35.0 && secs < 30.0,
        format!("frame 0 vs I0 {p0:.2} dB, frame 1 vs aligned I1 {p1:.2} dB, {secs:.1} s at 768x576"),
    )
}

fn static_invariance(dir: &Path) -> Verdict {
    let (w, h) = (320, 240);
    let mut cfg = config_for(&TwoPlaneScene::still(w, h), dir);
    cfg.path.kind = PathKind::Circle;
    cfg.path.frames = 9;
    let pre = preprocess(&cfg).map_err(|e| e.to_string())?;
    let path =
        generate_path(&cfg.path, pre.intrinsics, w, h, pre.scene.median_depth as f64).map_err(|e| e.to_string())?;
    let mut worst = f64::INFINITY;
    for frame in &path.frames {
        let full = render_frame(&pre.scene, &frame.camera, frame.t, &cfg.render).map_err(|e| e.to_string())?;
        let single = splat(&pre.scene.p0, TimeOrigin::Zero, 0.0, &frame.camera, &cfg.render.splat());
        let covered = Mask::from_vec(w, h, (0..w * h).map(|i| single.covered_at(i)).collect());
        worst = worst.min(psnr(&full.image, &single.color, 3, Some(&covered)));
    }
    ensure(
        worst > 35.0,
        format!(
            "minimum PSNR {worst:.2} dB over {} circle-path frames",
            path.frames.len()
        ),
    )
}

fn homography_recovery() -> Verdict {
    let truth = Matrix3::new(1.02, 0.01, 2.0, -0.01, 0.99, -1.0, 1e-4, 0.0, 1.0);
    let h = Homography::from_matrix(truth).map_err(|e| e.to_string())?;
    let (n, spacing) = (20usize, 16.0);
    let size = ((n - 1) as f64 * spacing + 40.0) as usize;
    let mut recovered = 0;
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let mut set = CorrespondenceSet::new(size, size);
        let mut slots: Vec<usize> = (0..n * n).collect();
        // First 30% of a shuffled index list become outliers.
        for i in (1..slots.len()).rev() {
            slots.swap(i, rng.random_range(0..=i));
        }
        let outliers: std::collections::HashSet<usize> = slots[..n * n * 3 / 10].iter().copied().collect();
        for k in 0..n * n {
            let p0 = Point2::new(10.0 + (k % n) as f64 * spacing, 10.0 + (k / n) as f64 * spacing);
            let p1 = if outliers.contains(&k) {
                Point2::new(
                    rng.random_range(0.0..size as f64 - 1.0),
                    rng.random_range(0.0..size as f64 - 1.0),
                )
            } else {
                h.apply(&p0).unwrap()
            };
            assert!(set.push(p0, p1, 1.0));
        }
        let params = RansacParams {
            seed: trial,
            ..RansacParams::default()
        };
        if let Ok(est) = estimate_homography(&set, &params) {
            let m = est.matrix() / est.matrix()[(2, 2)];
            let err = (m - truth).norm();
            worst = worst.max(err);
            if err <= 1e-3 {
                recovered += 1;
            }
        }
    }
    ensure(
        recovered >= 99,
        format!("{recovered}/100 trials within 1e-3 Frobenius (worst successful {worst:.1e})"),
    )
}

/// Brute-force agglomerative single linkage over all cluster pairs, then
/// smallest-gap merging down to `cap`. Returns sorted `(min, max)` spans.
fn single_linkage_oracle(values: &[f32], threshold: f32, cap: usize) -> Vec<(f32, f32)> {
    let mut clusters: Vec<Vec<f32>> = values.iter().map(|&v| vec![v]).collect();
    let link = |a: &[f32], b: &[f32]| {
        a.iter()
            .flat_map(|x| b.iter().map(move |y| (x - y).abs()))
            .fold(f32::INFINITY, f32::min)
    };
    let closest = |clusters: &[Vec<f32>]| {
        let mut best: Option<(f32, usize, usize)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = link(&clusters[i], &clusters[j]);
                if best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, i, j));
                }
            }
        }
        best
    };
    while let Some((d, i, j)) = closest(&clusters) {
        if d > threshold && clusters.len() <= cap {
            break;
        }
        let merged = clusters.remove(j);
        clusters[i].extend(merged);
    }
    let mut spans: Vec<(f32, f32)> = clusters
        .iter()
        .map(|c| {
            (
                c.iter().copied().fold(f32::INFINITY, f32::min),
                c.iter().copied().fold(f32::NEG_INFINITY, f32::max),
            )
        })
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    spans
}

fn clustering_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut capped = 0;
    for set in 0..200 {
        let n = rng.random_range(1..=64);
        // Half the sets use small thresholds so the layer cap engages.
        let threshold: f32 = if set % 2 == 0 {
            rng.random_range(0.005..0.05)
        } else {
            rng.random_range(0.05..0.4)
        };
        let raw: Vec<f32> = (0..n).map(|_| rng.random_range(0.0..1.0f32)).collect();
        let (min, max) = raw
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let range = max - min;
        let normalized: Vec<f32> = raw
            .iter()
            .map(|&v| if range > 0.0 { (v - min) / range } else { 0.0 })
            .collect();

        let expected = single_linkage_oracle(&normalized, threshold, MAX_LAYERS);
        if single_linkage_oracle(&normalized, threshold, usize::MAX).len() > MAX_LAYERS {
            capped += 1;
        }
        let got: Vec<(f32, f32)> = cluster_values(&normalized, threshold, MAX_LAYERS)
            .iter()
            .map(|s| (s.lo, s.hi))
            .collect();
        if got != expected {
            return Err(format!(
                "set {set} (threshold {threshold}): spans {got:?}, oracle {expected:?}"
            ));
        }

        // Pixel labels must induce the oracle's partition.
        let map = DisparityMap::from_values(ScalarMap::from_vec(n, 1, raw.clone()));
        let labels = cluster_disparity(&map, threshold).map_err(|e| e.to_string())?;
        for (i, &v) in normalized.iter().enumerate() {
            let want = expected.iter().position(|&(lo, hi)| lo <= v && v <= hi).unwrap();
            if labels.label(i, 0) != Some(want) {
                return Err(format!(
                    "set {set}: value {v} labeled {:?}, oracle cluster {want}",
                    labels.label(i, 0)
                ));
            }
        }
    }
    ensure(
        capped > 20,
        format!("200 sets match the oracle; {capped} exercised the {MAX_LAYERS}-layer cap"),
    )
}

fn scene_flow_reprojection(pre: &Preprocessed) -> Verdict {
    let k = &pre.intrinsics;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let mut worst = 0.0f64;
    let directions = [
        (&pre.ldi0, &pre.pair.mutual01, &pre.pair.f01, &pre.alignment.disparity1),
        (&pre.ldi1, &pre.pair.mutual10, &pre.pair.f10, &pre.inputs.disparity0),
    ];
    for (sfl, mutual, flow, target_disparity) in directions {
        for (layer, sf) in sfl.ldi.layers.iter().zip(&sfl.flow) {
            for (x, y) in layer.observed.iter_set() {
                if !mutual.get(x, y) {
                    continue;
                }
                let [fx, fy] = flow.pixel(x, y);
                let (qx, qy) = (x as f32 + fx, y as f32 + fy);
                if target_disparity.sample(qx, qy).is_none() {
                    skipped += 1;
                    continue;
                }
                let d = layer.disparity.pixel(x, y)[0] as f64;
                let x0 = k.unproject(x as f64, y as f64, 1.0 / d);
                let u = sf.u.pixel(x, y);
                let moved = nalgebra::Point3::new(x0.x + u[0], x0.y + u[1], x0.z + u[2]);
                let (px, py) = k.project(&moved);
                worst = worst.max((px - qx as f64).hypot(py - qy as f64));
                checked += 1;
            }
        }
    }
    ensure(
        checked > 0 && worst <= 1e-4,
        format!("{checked} mutual pixels, max reprojection error {worst:.1e} px ({skipped} without target disparity)"),
    )
}

/// Largest depth over covered pixels vs over observed pixels, per layer.
fn clamp_violations(ldi: &Ldi) -> (usize, usize) {
    let mut violations = 0;
    for layer in &ldi.layers {
        let mut max_observed = f32::NEG_INFINITY;
        let mut max_covered = f32::NEG_INFINITY;
        for i in 0..layer.color.len() {
            let depth = 1.0 / layer.disparity.pixel_at(i)[0];
            if layer.observed.get_at(i) {
                max_observed = max_observed.max(depth);
            }
            if layer.covered_at(i) {
                max_covered = max_covered.max(depth);
            }
        }
        if max_covered > max_observed {
            violations += 1;
        }
    }
    (violations, ldi.layer_count())
}

fn random_block_scene(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (RgbaMap, DisparityMap) {
    let mut d = ScalarMap::from_fn(w, h, |_, y| [0.1 + 0.05 * y as f32 / h as f32]);
    for _ in 0..rng.random_range(1..8) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (bw, bh) = (rng.random_range(2..w / 2), rng.random_range(2..h / 2));
        let level: f32 = rng.random_range(0.15..1.0);
        let slope: f32 = rng.random_range(-0.004..0.004);
        for y in y0..(y0 + bh).min(h) {
            for x in x0..(x0 + bw).min(w) {
                d.set_pixel(x, y, [level + slope * (x - x0) as f32]);
            }
        }
    }
    for v in d.data_mut() {
        *v += rng.random_range(-0.01..0.01f32);
    }
    let rgb = RgbaMap::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.5, 1.0]);
    (rgb, DisparityMap::from_values(d))
}

fn depth_clamp(pipeline_scene: &Preprocessed) -> Verdict {
    let mut layers = 0;
    let mut violations = 0;
    for ldi in [&pipeline_scene.ldi0.ldi, &pipeline_scene.ldi1.ldi] {
        let (v, n) = clamp_violations(ldi);
        violations += v;
        layers += n;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..40 {
        let (w, h) = (rng.random_range(16..96), rng.random_range(16..96));
        let (rgb, d) = random_block_scene(&mut rng, w, h);
        let threshold = rng.random_range(0.05..0.3);
        let ldi = build_ldi(&rgb, &d, threshold, default_margin(w, h)).map_err(|e| e.to_string())?;
        let (v, n) = clamp_violations(&ldi);
        violations += v;
        layers += n;
    }
    ensure(
        violations == 0,
        format!("{violations} violations over {layers} layers in 42 LDIs"),
    )
}

fn performance(dir: &Path) -> Verdict {
    let mut cfg = config_for(&TwoPlaneScene::checkerboard(768, 576, 48), dir);
    cfg.path.kind = PathKind::Circle;
    cfg.path.frames = 4;
    let manifest = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(cfg.output_dir.join("manifest.json")).map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let pre_ms = json["timings"]["preprocessing"]["total_ms"]
        .as_f64()
        .ok_or("no preprocessing timing")?;
    let frames_ms: Vec<f64> = json["timings"]["render"]["frames_ms"]
        .as_array()
        .ok_or("no frame timings")?
        .iter()
        .filter_map(|v| v.as_f64())
        .collect();
    let worst = frames_ms.iter().copied().fold(0.0, f64::max);
    let points = manifest.scene.points[0] + manifest.scene.points[1];
    let threads = rayon::current_num_threads();
    ensure(
        frames_ms.len() == 4 && worst < 1000.0 && pre_ms < 30_000.0 && points >= 1_200_000,
        format!(
            "{points} points, slowest frame {worst:.0} ms, preprocessing {:.1} s, {threads} thread(s)",
            pre_ms / 1e3
        ),
    )
}

fn frame_bytes(dir: &Path, frames: usize) -> Vec<Vec<u8>> {
    (0..frames)
        .map(|i| std::fs::read(dir.join(format!("frame_{i:04}.png"))).unwrap())
        .collect()
}

fn manifest_without_timings(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v.as_object_mut().unwrap().remove("timings");
    v
}

fn determinism(dir: &Path) -> Verdict {
    let mut cfg = config_for(&TwoPlaneScene::new(256, 192), dir);
    cfg.path.kind = PathKind::Circle;
    cfg.path.frames = 4;
    cfg.seed = 1234;
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (frames_a, manifest_a) = (
        frame_bytes(&cfg.output_dir, 4),
        manifest_without_timings(&cfg.output_dir),
    );
    run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (frames_b, manifest_b) = (
        frame_bytes(&cfg.output_dir, 4),
        manifest_without_timings(&cfg.output_dir),
    );
    if frames_a != frames_b || manifest_a != manifest_b {
        return Err("reruns differ".into());
    }

    let render_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let pre = preprocess(&cfg).unwrap();
            let path = generate_path(&cfg.path, pre.intrinsics, 256, 192, pre.scene.median_depth as f64).unwrap();
            path.frames
                .iter()
                .map(|f| render_frame(&pre.scene, &f.camera, f.t, &cfg.render).unwrap().image)
                .collect::<Vec<_>>()
        })
    };
    let (one, four) = (render_with(1), render_with(4));
    let max_diff = one
        .iter()
        .zip(&four)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0f32, f32::max);
    ensure(
        max_diff < 1e-5,
        format!("reruns bit-identical; 1 vs 4 threads max pixel difference {max_diff:.1e}"),
    )
}

fn main() -> ExitCode {
    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path();
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match &verdict {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => println!("FAIL  {name}: {detail}"),
        }
        results.push((name, verdict));
    };

    run("blend weight oracle", &mut blend_weight_oracle);
    run("endpoint reconstruction", &mut || {
        endpoint_reconstruction(&root.join("endpoint"))
    });
    run("static-scene invariance", &mut || {
        static_invariance(&root.join("static"))
    });
    run("homography recovery", &mut homography_recovery);
    run("clustering oracle", &mut clustering_oracle);

    let shared = catch_unwind(|| {
        let cfg = config_for(&TwoPlaneScene::new(256, 192), &root.join("two_plane"));
        preprocess(&cfg)
    });
    let shared = match shared {
        Ok(Ok(pre)) => Some(pre),
        Ok(Err(e)) => {
            eprintln!("two-plane preprocessing failed: {e}");
            None
        }
        Err(_) => None,
    };
    let need = || Err::<String, _>("two-plane preprocessing failed".to_string());
    run("scene-flow reprojection", &mut || {
        shared.as_ref().map_or_else(need, scene_flow_reprojection)
    });
    run("depth clamp", &mut || shared.as_ref().map_or_else(need, depth_clamp));
    run("performance", &mut || performance(&root.join("performance")));
    run("determinism", &mut || determinism(&root.join("determinism")));

    let failed = results.iter().filter(|(_, v)| v.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
