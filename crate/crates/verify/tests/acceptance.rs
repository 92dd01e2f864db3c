//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails. Informational lines start with `info`.

use std::collections::HashMap;
use std::process::ExitCode;
use std::time::Instant;

use rand::Rng;

use splatsketch::camera::{orbit_to_extrinsics, pose_schedule, pose_weight, Circle, OrbitPose};
use splatsketch::config::RunConfig;
use splatsketch::gaussian::GaussianScene;
use splatsketch::gradcheck::{finite_diff_check, random_scene, relative_error};
use splatsketch::guidance::{
    channel_stats, distribution_transfer, distribution_transfer_backward, distribution_transfer_unclamped,
    guidance_filename, load_guidance, save_guidance, synthetic_guidance, GuidanceSet, StaticGuidance,
};
use splatsketch::image::Image;
use splatsketch::io::png::{dequantize, quantize};
use splatsketch::io::{load_scene, read_image, save_scene, write_image};
use splatsketch::losses::{builtin_encoder, edge_sketch, sketch_loss, MockNoiseProvider, NoiseProvider};
use splatsketch::metrics::{psnr, ssim};
use splatsketch::optim::{fit, init_sphere, FitOutput, PoseWeighting};
use splatsketch::render::{render, render_reference, RenderConfig};
use splatsketch::rng;
use splatsketch_verify::{camera, max_abs_diff, overlap_scene, random_image};

const TRUTH_SEED: u64 = 11;
const INIT_SEED: u64 = 5;
const INIT_RADIUS: f64 = 0.7;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn oracle_equivalence() -> Outcome {
    let started = Instant::now();
    let exact = RenderConfig::default().exact();
    let mut worst: f64 = 0.0;
    let mut worst_default: f64 = 0.0;
    for seed in 0..100u64 {
        let scene = overlap_scene(1 + (seed as usize % 16), 1000 + seed);
        let (ext, intr) = camera(32, (seed * 37 % 360) as f64);
        let reference = render_reference(&scene, &ext, &intr, &exact).unwrap();
        let tiled = render(&scene, &ext, &intr, &exact).unwrap();
        worst = worst.max(max_abs_diff(tiled.rgb.data(), reference.rgb.data()));
        let thresholded = render(&scene, &ext, &intr, &RenderConfig::default()).unwrap();
        worst_default = worst_default.max(max_abs_diff(thresholded.rgb.data(), reference.rgb.data()));
    }
    let secs = started.elapsed().as_secs_f64();
    println!("info 1: with the default 1/255 skip and 1e-4 termination the max deviation is {worst_default:.2e}");
    outcome(
        worst < 1e-5 && secs < 60.0,
        format!("100 scenes, max |render - reference| = {worst:.2e} (thresholds off in both), {:.0} ms", secs * 1e3),
    )
}

fn gradient_soundness() -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..20u64 {
        let scene = random_scene(1 + (seed as usize % 8), 500 + seed);
        let (ext, intr) = camera(16, (seed * 53 % 360) as f64);
        let report = finite_diff_check(&scene, &ext, &intr, &RenderConfig::default(), seed).unwrap();
        worst = worst.max(report.worst());
        if !report.passed() {
            failures += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        failures == 0 && secs < 300.0,
        format!("20 scenes x 5 groups, worst relative error {worst:.2e}, {failures} failing, {:.0} ms", secs * 1e3),
    )
}

struct Experiment {
    config: RunConfig,
    truth: GaussianScene,
    guidance: GuidanceSet,
    init: GaussianScene,
}

fn experiment() -> Experiment {
    let mut config = RunConfig::default();
    config.train.total_steps = 2000;
    config.train.resolution = 64;
    config.train.use_sds = false;
    config.train.use_sketch = false;
    let truth = random_scene(32, TRUTH_SEED);
    let guidance = synthetic_guidance(
        &truth,
        &config.train.schedule().unwrap(),
        &config.train.intrinsics().unwrap(),
        &config.render,
    )
    .unwrap();
    let init = init_sphere(256, INIT_RADIUS, INIT_SEED).unwrap();
    Experiment { config, truth, guidance, init }
}

/// Mean PSNR and SSIM of `scene` against every guidance pose, plus the mean
/// PSNR over the poses the color term actually weighs.
fn evaluate(scene: &GaussianScene, exp: &Experiment) -> (f64, f64, f64, usize) {
    let intr = exp.config.train.intrinsics().unwrap();
    let (mut p, mut s, mut pw, mut nw) = (0.0, 0.0, 0.0, 0);
    for (pose, guide) in &exp.guidance.entries {
        let img = render(scene, &orbit_to_extrinsics(pose), &intr, &exp.config.render).unwrap().rgb;
        let q = psnr(&img, guide).unwrap();
        p += q;
        s += ssim(&img, guide).unwrap();
        if pose_weight(pose) > 1e-9 {
            pw += q;
            nw += 1;
        }
    }
    let n = exp.guidance.len() as f64;
    (p / n, s / n, pw / nw as f64, nw)
}

fn run(exp: &Experiment, config: &RunConfig, noise: Option<&dyn NoiseProvider>, sketch: Option<&Image>) -> (FitOutput, f64) {
    let started = Instant::now();
    let out = fit(&exp.init, &mut StaticGuidance(exp.guidance.clone()), noise, sketch, config).unwrap();
    (out, started.elapsed().as_secs_f64())
}

fn scene_recovery(exp: &Experiment) -> (Outcome, f64) {
    let (out, secs) = run(exp, &exp.config, None, None);
    let (p, s, weighted, nw) = evaluate(&out.scene, exp);
    println!("info 3: mean PSNR over the {nw} poses with non-zero color weight: {weighted:.2} dB");
    let mut control = exp.config.clone();
    control.train.pose_weighting = PoseWeighting::Uniform;
    let (cout, csecs) = run(exp, &control, None, None);
    let (cp, cs, _, _) = evaluate(&cout.scene, exp);
    println!("info 3: control with every pose weighted 1: PSNR {cp:.2} dB, SSIM {cs:.4} ({csecs:.0}s)");
    (
        outcome(
            p >= 30.0 && s >= 0.90 && secs < 600.0,
            format!("mean over 24 poses: PSNR {p:.2} dB, SSIM {s:.4} after 2000 steps, {secs:.0}s"),
        ),
        p,
    )
}

fn sds_path(exp: &Experiment) -> Outcome {
    let mut config = exp.config.clone();
    config.train.use_color = false;
    config.train.use_sds = true;
    let targets: HashMap<String, Image> = exp
        .guidance
        .entries
        .iter()
        .map(|(pose, img)| (guidance_filename(pose).trim_end_matches(".png").to_string(), img.clone()))
        .collect();
    let mock = MockNoiseProvider::per_tag(targets, 1.0);
    let (out, secs) = run(exp, &config, Some(&mock), None);
    let (p, s, _, _) = evaluate(&out.scene, exp);
    let intr = config.train.intrinsics().unwrap();
    let transferred: f64 = exp
        .guidance
        .entries
        .iter()
        .map(|(pose, guide)| {
            let img = render(&out.scene, &orbit_to_extrinsics(pose), &intr, &config.render).unwrap().rgb;
            psnr(&distribution_transfer(&img, guide).unwrap(), guide).unwrap()
        })
        .sum::<f64>()
        / exp.guidance.len() as f64;
    println!("info 4: PSNR of the statistics-transferred renders against guidance: {transferred:.2} dB");
    outcome(p >= 25.0, format!("mean over 24 poses: PSNR {p:.2} dB, SSIM {s:.4}, {secs:.0}s"))
}

fn transfer_checks() -> Outcome {
    let mut r = rng::stream(77, "acceptance-transfer");
    let mut worst_stat: f64 = 0.0;
    for i in 0..1000u64 {
        let (w, h) = (r.gen_range(2..12), r.gen_range(2..12));
        let content = random_image(w, h, 2 * i);
        let guide = random_image(w, h, 2 * i + 1).map(|v| 0.2 + 0.6 * v);
        let out = distribution_transfer_unclamped(&content, &guide).unwrap();
        let (a, b) = (channel_stats(&out), channel_stats(&guide));
        for c in 0..3 {
            worst_stat = worst_stat.max((a.mean[c] - b.mean[c]).abs()).max((a.std[c] - b.std[c]).abs());
        }
    }
    let mut worst_grad: f64 = 0.0;
    for i in 0..20u64 {
        let content = random_image(4, 4, 5000 + i);
        let guide = random_image(4, 4, 6000 + i);
        let probe = random_image(4, 4, 7000 + i).map(|v| 2.0 * v - 1.0);
        let loss = |c: &Image| -> f64 {
            distribution_transfer(c, &guide).unwrap().data().iter().zip(probe.data()).map(|(a, b)| a * b).sum()
        };
        let analytic = distribution_transfer_backward(&content, &guide, &probe).unwrap();
        let h = 1e-6;
        for k in 0..content.data().len() {
            let (mut up, mut down) = (content.clone(), content.clone());
            up.data_mut()[k] += h;
            down.data_mut()[k] -= h;
            let numeric = (loss(&up) - loss(&down)) / (2.0 * h);
            worst_grad = worst_grad.max(relative_error(analytic.data()[k], numeric));
        }
    }
    outcome(
        worst_stat < 1e-6 && worst_grad < 1e-4,
        format!("1000 pairs: worst mean/std mismatch {worst_stat:.1e}; 4x4 backward worst relative error {worst_grad:.1e}"),
    )
}

fn schedule_fidelity() -> Outcome {
    let schedule = pose_schedule(30, 3.0).unwrap();
    let w_front = pose_weight(&OrbitPose::horizontal(0.0, 3.0));
    let w_vert = pose_weight(&OrbitPose::vertical(0.0, 3.0));
    let mut config = RunConfig::default();
    config.train.total_steps = 500;
    config.train.resolution = 8;
    config.train.use_color = false;
    config.train.use_sds = false;
    config.train.use_sketch = false;
    let set = synthetic_guidance(&random_scene(3, 1), &schedule, &config.train.intrinsics().unwrap(), &config.render)
        .unwrap();
    let out = fit(&init_sphere(4, 0.5, 1).unwrap(), &mut StaticGuidance(set), None, None, &config).unwrap();
    let exact_lambda = out.log.len() == 500
        && out.log.iter().all(|r| r.lambda_linear == r.step as f64 / 500.0);
    let circles = schedule.iter().filter(|p| p.circle == Circle::Horizontal).count();
    outcome(
        schedule.len() == 24 && circles == 12 && w_front == 1.0 && w_vert == 0.3 && exact_lambda,
        format!(
            "{} poses ({circles} horizontal), weights {w_front} / {w_vert}, lambda_linear exact at all 500 steps: {exact_lambda}",
            schedule.len()
        ),
    )
}

fn sketch_term(exp: &Experiment, base_psnr: f64) -> Outcome {
    let intr = exp.config.train.intrinsics().unwrap();
    let front = orbit_to_extrinsics(&OrbitPose::horizontal(0.0, exp.config.train.radius));
    let truth_front = render(&exp.truth, &front, &intr, &exp.config.render).unwrap().rgb;
    let sketch = edge_sketch(&truth_front);
    let mut config = exp.config.clone();
    config.train.use_sketch = true;
    config.train.sketch_weight = 0.1;
    let (out, secs) = run(exp, &config, None, Some(&sketch));
    let encoder = builtin_encoder();
    let value = |scene: &GaussianScene| {
        let img = render(scene, &front, &intr, &config.render).unwrap().rgb;
        sketch_loss(&encoder, &sketch, &img, 0.1).unwrap().value
    };
    let (before, after) = (value(&exp.init), value(&out.scene));
    let (p, _, _, _) = evaluate(&out.scene, exp);
    outcome(
        p >= base_psnr - 1.0 && after < before,
        format!(
            "PSNR {p:.2} dB vs {base_psnr:.2} dB without sketch; front-view sketch loss {before:.4e} -> {after:.4e}, {secs:.0}s"
        ),
    )
}

fn round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let scene_path = dir.path().join("scene.ply");
    let scene = overlap_scene(10, 3);
    save_scene(&scene, &scene_path).unwrap();
    let once = load_scene(&scene_path).unwrap();
    save_scene(&once, &scene_path).unwrap();
    let ply = load_scene(&scene_path).unwrap() == once
        && once.positions.iter().zip(&scene.positions).all(|(a, b)| a.map(|v| v as f32) == b.map(|v| v as f32));

    let png_path = dir.path().join("img.png");
    let img = random_image(9, 6, 4).map(|v| dequantize(quantize(v)));
    write_image(&img, &png_path).unwrap();
    let png = read_image(&png_path).unwrap() == img;

    let mut config = RunConfig::default();
    config.train.resolution = 64;
    config.groups.lr_sh = 0.0123;
    let cfg = RunConfig::parse(&config.serialize()).unwrap() == config;

    let schedule = pose_schedule(30, 3.0).unwrap();
    let set = GuidanceSet::new(
        schedule.iter().enumerate().map(|(i, p)| (*p, random_image(8, 8, i as u64).map(|v| dequantize(quantize(v))))).collect(),
        0,
    )
    .unwrap();
    let gdir = dir.path().join("guidance");
    save_guidance(&set, &gdir).unwrap();
    let intr = splatsketch::camera::CameraIntrinsics::new(50.0, 8, 8).unwrap();
    let guidance = load_guidance(&gdir, &intr, &schedule).unwrap() == set;
    outcome(
        ply && png && cfg && guidance,
        format!("ply {ply}, png {png}, config {cfg}, guidance directory {guidance}"),
    )
}

fn main() -> ExitCode {
    let mut all = true;
    let mut report = |n: u32, name: &str, o: Outcome| {
        all &= o.pass;
        println!("criterion {n} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    };
    report(1, "oracle equivalence", oracle_equivalence());
    report(2, "gradient soundness", gradient_soundness());
    let exp = experiment();
    let (o3, base_psnr) = scene_recovery(&exp);
    report(3, "scene recovery", o3);
    report(4, "sds path", sds_path(&exp));
    report(5, "distribution transfer", transfer_checks());
    report(6, "schedule fidelity", schedule_fidelity());
    report(7, "sketch term", sketch_term(&exp, base_psnr));
    report(8, "format round-trips", round_trips());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
