use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{orbit_to_extrinsics, pose_schedule, pose_weight, pose_weight_raw, CameraIntrinsics, Circle, OrbitPose};
use crate::config::RunConfig;
use crate::error::{invalid, Error, Result};
use crate::gaussian::{prune, GaussianScene};
use crate::grad::{render_backward, GradientSet};
use crate::guidance::{distribution_transfer, distribution_transfer_backward, guidance_filename, GuidanceProvider, GuidanceSet};
use crate::image::Image;
use crate::losses::{builtin_encoder, color_loss, sds_grad, sketch_loss, NoiseProvider};
use crate::metrics::psnr;
use crate::render::{render, RenderConfig};
use crate::rng;

use super::adam::{adam_step, AdamState};

/// How the color term is weighted per view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoseWeighting {
    /// `max(cos, 0)`, with the vertical circle scaled by 0.3.
    Clamped,
    /// The same cosines without the clamp; back views get negative weight.
    Raw,
    /// Every view weighs 1. Not part of the method; a control for
    /// experiments that need all views supervised by color.
    Uniform,
}

impl PoseWeighting {
    pub fn name(self) -> &'static str {
        match self {
            PoseWeighting::Clamped => "clamped",
            PoseWeighting::Raw => "raw",
            PoseWeighting::Uniform => "uniform",
        }
    }
}

impl std::str::FromStr for PoseWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clamped" => Ok(PoseWeighting::Clamped),
            "raw" => Ok(PoseWeighting::Raw),
            "uniform" => Ok(PoseWeighting::Uniform),
            other => Err(invalid(format!("unknown pose weighting '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub batch_poses: usize,
    pub guidance_refresh_interval: usize,
    pub schedule_step_degrees: u32,
    pub radius: f64,
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    /// Square render resolution in pixels.
    pub resolution: usize,
    pub use_color: bool,
    pub use_sds: bool,
    pub use_sketch: bool,
    pub color_weight: f64,
    pub sds_weight: f64,
    pub sketch_weight: f64,
    pub pose_weighting: PoseWeighting,
    pub timestep_min: u32,
    pub timestep_max: u32,
    pub prune: bool,
    pub prune_interval: usize,
    pub prune_opacity: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 500,
            batch_poses: 4,
            guidance_refresh_interval: 30,
            schedule_step_degrees: 30,
            radius: 3.0,
            fov_y: 50.0,
            resolution: 512,
            use_color: true,
            use_sds: true,
            use_sketch: true,
            color_weight: 1.0,
            sds_weight: 1.0,
            sketch_weight: 0.1,
            pose_weighting: PoseWeighting::Clamped,
            timestep_min: 20,
            timestep_max: 980,
            prune: false,
            prune_interval: 100,
            prune_opacity: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(invalid("total_steps must be positive"));
        }
        if self.batch_poses == 0 {
            return Err(invalid("batch_poses must be at least 1"));
        }
        if self.guidance_refresh_interval == 0 {
            return Err(invalid("guidance_refresh_interval must be at least 1"));
        }
        if self.prune && self.prune_interval == 0 {
            return Err(invalid("prune_interval must be at least 1"));
        }
        if !(1..=self.timestep_max).contains(&self.timestep_min) || self.timestep_max > 1000 {
            return Err(invalid("SDS timestep range must satisfy 1 <= min <= max <= 1000"));
        }
        self.intrinsics()?;
        self.schedule()?;
        Ok(())
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::new(self.fov_y, self.resolution, self.resolution)
    }

    pub fn schedule(&self) -> Result<Vec<OrbitPose>> {
        pose_schedule(self.schedule_step_degrees, self.radius)
    }

    fn pose_weight(&self, pose: &OrbitPose) -> f64 {
        match self.pose_weighting {
            PoseWeighting::Clamped => pose_weight(pose),
            PoseWeighting::Raw => pose_weight_raw(pose),
            PoseWeighting::Uniform => 1.0,
        }
    }
}

/// One line of the metrics log.
///
/// `loss_color` and `loss_sketch` are batch means of the weighted terms,
/// `sds_grad_norm` is the mean L2 norm of the image-space SDS gradient and
/// `psnr` the mean PSNR of the batch renders against their guidance, all
/// taken before the parameter update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub loss_color: f64,
    pub loss_sketch: f64,
    pub sds_grad_norm: f64,
    pub psnr: f64,
    pub lambda_linear: f64,
    pub millis: u64,
}

impl MetricsRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("plain record")
    }
}

pub fn parse_metrics_log(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(format!("metrics line '{l}': {e}"))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub scene: GaussianScene,
    pub log: Vec<MetricsRecord>,
}

impl FitOutput {
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| r.to_line() + "\n").collect()
    }
}

/// Cycles through the schedule in seeded random order, reshuffling each
/// time it is exhausted.
struct PoseCycle {
    order: Vec<usize>,
    next: usize,
    rng: rng::Rng,
}

impl PoseCycle {
    fn new(len: usize, seed: u64) -> Self {
        let mut c = Self { order: (0..len).collect(), next: len, rng: rng::stream(seed, "pose-shuffle") };
        c.order.shuffle(&mut c.rng);
        c.next = 0;
        c
    }

    fn take(&mut self) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

fn stamp(step: usize, e: Error) -> Error {
    Error::Provider { step, source: Box::new(e) }
}

/// Optimizes `initial` against the guidance produced by `guidance`,
/// refreshing it at step 1 and every `guidance_refresh_interval` steps.
///
/// Each step renders `batch_poses` schedule poses and sums per view the
/// color term (pose and step weighted), the SDS term (taken on the render
/// after distribution transfer to the guide and chained back through the
/// transfer) and, on horizontal poses, the sketch term weighted by the pose
/// weight. View gradients are averaged, then one Adam step is applied.
pub fn fit(
    initial: &GaussianScene,
    guidance: &mut dyn GuidanceProvider,
    noise: Option<&dyn NoiseProvider>,
    sketch: Option<&Image>,
    config: &RunConfig,
) -> Result<FitOutput> {
    fit_observed(initial, guidance, noise, sketch, config, &mut |_, _| {})
}

/// [`fit`], calling `observer` after every step with that step's record and
/// the updated scene.
pub fn fit_observed(
    initial: &GaussianScene,
    guidance: &mut dyn GuidanceProvider,
    noise: Option<&dyn NoiseProvider>,
    sketch: Option<&Image>,
    config: &RunConfig,
    observer: &mut dyn FnMut(&MetricsRecord, &GaussianScene),
) -> Result<FitOutput> {
    let tc = &config.train;
    tc.validate()?;
    config.render.validate()?;
    config.groups.validate()?;
    initial.validate()?;
    if tc.use_sds && noise.is_none() {
        return Err(invalid("SDS term enabled without a noise provider"));
    }
    if tc.use_sketch && sketch.is_none() {
        return Err(invalid("sketch term enabled without a sketch image"));
    }
    let intrinsics = tc.intrinsics()?;
    let schedule = tc.schedule()?;
    let render_cfg = RenderConfig { retain_contributors: true, ..config.render.clone() };
    let encoder = builtin_encoder();

    let mut scene = initial.clone();
    scene.renormalize_rotations();
    let mut adam = AdamState::new(&scene);
    let mut poses = PoseCycle::new(schedule.len(), tc.seed);
    let mut sds_rng = rng::stream(tc.seed, "sds-timesteps");
    let mut set: Option<GuidanceSet> = None;
    let mut log = Vec::with_capacity(tc.total_steps);

    for step in 1..=tc.total_steps {
        let started = Instant::now();
        if step == 1 || (step - 1) % tc.guidance_refresh_interval == 0 {
            let fresh = guidance.guidance(step).map_err(|e| stamp(step, e))?;
            fresh.covers(&schedule).map_err(|e| stamp(step, e))?;
            if let Some((_, img)) = fresh.entries.first() {
                if img.width() != intrinsics.width || img.height() != intrinsics.height {
                    return Err(stamp(step, invalid("guidance resolution differs from the render resolution")));
                }
            }
            set = Some(fresh);
        }
        let set = set.as_ref().expect("guidance loaded at step 1");
        let lambda_linear = step as f64 / tc.total_steps as f64;

        let mut total = GradientSet::zeros_like(&scene);
        let (mut loss_color, mut loss_sketch, mut sds_norm, mut psnr_sum) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..tc.batch_poses {
            let pose = schedule[poses.take()];
            let guide = set.get(&pose).expect("coverage checked");
            let ext = orbit_to_extrinsics(&pose);
            let out = render(&scene, &ext, &intrinsics, &render_cfg)?;
            let rgb = &out.rgb;
            psnr_sum += psnr(rgb, guide)?;
            let mut d_image = Image::new(rgb.width(), rgb.height());

            if tc.use_color {
                let rep = color_loss(guide, rgb, tc.pose_weight(&pose), step, tc.total_steps)?;
                loss_color += tc.color_weight * rep.value;
                d_image.add_scaled(&rep.d_image, tc.color_weight);
            }
            if tc.use_sds {
                let provider = noise.expect("checked above");
                let transferred = distribution_transfer(rgb, guide)?;
                let t = sds_rng.gen_range(tc.timestep_min..=tc.timestep_max);
                let noise_seed: u64 = sds_rng.gen();
                let tag = guidance_filename(&pose);
                let tag = tag.trim_end_matches(".png");
                let g = sds_grad(provider, &transferred, t, noise_seed, tag).map_err(|e| stamp(step, e))?;
                sds_norm += g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                let d_content = distribution_transfer_backward(rgb, guide, &g)?;
                d_image.add_scaled(&d_content, tc.sds_weight);
            }
            if tc.use_sketch && pose.circle == Circle::Horizontal {
                let w = tc.sketch_weight * tc.pose_weight(&pose);
                let rep = sketch_loss(&encoder, sketch.expect("checked above"), rgb, w)?;
                loss_sketch += rep.value;
                d_image.add_scaled(&rep.d_image, 1.0);
            }
            if !d_image.is_finite() {
                let detail = format!("image-space gradient at pose {}", guidance_filename(&pose));
                return Err(Error::NonFinite { step, detail });
            }
            let view = render_backward(&scene, &ext, &intrinsics, &render_cfg, &out, &d_image)?;
            total.add_scaled(&view, 1.0);
        }
        let inv = 1.0 / tc.batch_poses as f64;
        total.scale(inv);
        if let Some(detail) = total.first_non_finite() {
            return Err(Error::NonFinite { step, detail });
        }
        adam_step(&mut scene, &total, &mut adam, &config.groups)?;
        if tc.prune && step % tc.prune_interval == 0 {
            let keep: Vec<bool> = (0..scene.len()).map(|i| scene.opacity(i) >= tc.prune_opacity).collect();
            if keep.iter().any(|k| !k) {
                adam = adam.retain_indices(scene.coeffs_per_gaussian(), |i| keep[i]);
                scene = prune(&scene, tc.prune_opacity);
            }
        }
        log.push(MetricsRecord {
            step,
            loss_color: loss_color * inv,
            loss_sketch: loss_sketch * inv,
            sds_grad_norm: sds_norm * inv,
            psnr: psnr_sum * inv,
            lambda_linear,
            millis: started.elapsed().as_millis() as u64,
        });
        observer(log.last().expect("just pushed"), &scene);
    }
    Ok(FitOutput { scene, log })
}
