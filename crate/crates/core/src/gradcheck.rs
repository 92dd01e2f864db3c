//! Central-difference verification of [`render_backward`].
//!
//! The scalar probe is `L = sum <w, render>` with a seeded random weight
//! image `w`, so `dL/d(image) = w`. Each scalar parameter is perturbed by
//! `+-h` and re-rendered; perturbations that change the set of contributing
//! (pixel, Gaussian) pairs cross a cull or cutoff boundary, where the loss is
//! not differentiable, and are skipped.

use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::camera::{CameraExtrinsics, CameraIntrinsics};
use crate::error::{invalid, Result};
use crate::gaussian::{logit, quat_from_axis_angle, Gaussian, GaussianScene};
use crate::grad::{render_backward, GradientSet};
use crate::image::Image;
use crate::render::{render, RenderConfig, RenderOutput};
use crate::rng;

pub const MAX_GRADCHECK_GAUSSIANS: usize = 64;
pub const DEFAULT_STEP: f64 = 1e-4;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error, so that gradients which are
/// zero up to rounding do not produce spurious failures.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Position,
    Rotation,
    LogScale,
    Opacity,
    Sh,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Position, ParamGroup::Rotation, ParamGroup::LogScale, ParamGroup::Opacity, ParamGroup::Sh];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Position => "position",
            ParamGroup::Rotation => "rotation",
            ParamGroup::LogScale => "log_scale",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupReport {
    pub group: ParamGroup,
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub groups: Vec<GroupReport>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error < self.tolerance)
    }

    pub fn group(&self, group: ParamGroup) -> &GroupReport {
        self.groups.iter().find(|g| g.group == group).expect("all groups reported")
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            writeln!(
                f,
                "{:<10} max_rel_err={:.3e} checked={} skipped={} {}",
                g.group.name(),
                g.max_rel_error,
                g.checked,
                g.skipped,
                if g.max_rel_error < self.tolerance { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Seeded weight image in `[-1, 1]` used as the probe's upstream gradient.
pub fn probe_weights(width: usize, height: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, "gradcheck-probe");
    let dist = Uniform::new_inclusive(-1.0, 1.0);
    let data = (0..width * height * 3).map(|_| dist.sample(&mut r)).collect();
    Image::from_vec(width, height, data).expect("sized raster")
}

/// Compares [`render_backward`] against central differences with the
/// default step and tolerance. Compositing thresholds are disabled for the
/// comparison since they make the loss discontinuous.
pub fn finite_diff_check(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    seed: u64,
) -> Result<GradCheckReport> {
    finite_diff_check_with(scene, extrinsics, intrinsics, config, seed, DEFAULT_STEP, DEFAULT_TOLERANCE)
}

pub fn finite_diff_check_with(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    seed: u64,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    if scene.len() > MAX_GRADCHECK_GAUSSIANS {
        return Err(invalid(format!(
            "finite-difference check is capped at {MAX_GRADCHECK_GAUSSIANS} gaussians, scene has {}",
            scene.len()
        )));
    }
    let cfg = RenderConfig { retain_contributors: true, ..config.exact() };
    let weights = probe_weights(intrinsics.width, intrinsics.height, seed);
    let probe = |s: &GaussianScene| -> Result<(f64, RenderOutput)> {
        let out = render(s, extrinsics, intrinsics, &cfg)?;
        let l = out.rgb.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum();
        Ok((l, out))
    };
    let (_, base) = probe(scene)?;
    let analytic = render_backward(scene, extrinsics, intrinsics, &cfg, &base, &weights)?;
    let base_sig = signature(&base);

    let mut groups = Vec::new();
    for group in ParamGroup::ALL {
        let mut report = GroupReport { group, max_rel_error: 0.0, checked: 0, skipped: 0 };
        for (slot, a) in parameter_slots(scene, &analytic, group) {
            let mut plus = scene.clone();
            let mut minus = scene.clone();
            *slot.get_mut(&mut plus) += step;
            *slot.get_mut(&mut minus) -= step;
            let (lp, op) = probe(&plus)?;
            let (lm, om) = probe(&minus)?;
            if signature(&op) != base_sig || signature(&om) != base_sig {
                report.skipped += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * step);
            report.max_rel_error = report.max_rel_error.max(relative_error(a, numeric));
            report.checked += 1;
        }
        groups.push(report);
    }
    Ok(GradCheckReport { groups, tolerance })
}

/// Addresses one scalar parameter of a scene.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Position(usize, usize),
    Rotation(usize, usize),
    LogScale(usize, usize),
    Opacity(usize),
    Sh(usize, usize),
}

impl Slot {
    fn get_mut(self, s: &mut GaussianScene) -> &mut f64 {
        match self {
            Slot::Position(i, c) => &mut s.positions[i][c],
            Slot::Rotation(i, c) => &mut s.rotations[i][c],
            Slot::LogScale(i, c) => &mut s.log_scales[i][c],
            Slot::Opacity(i) => &mut s.opacity_logits[i],
            Slot::Sh(k, c) => &mut s.sh_coeffs[k][c],
        }
    }
}

fn parameter_slots(scene: &GaussianScene, g: &GradientSet, group: ParamGroup) -> Vec<(Slot, f64)> {
    let n = scene.len();
    let mut out = Vec::new();
    match group {
        ParamGroup::Position => {
            for i in 0..n {
                for c in 0..3 {
                    out.push((Slot::Position(i, c), g.d_position[i][c]));
                }
            }
        }
        ParamGroup::Rotation => {
            for i in 0..n {
                for c in 0..4 {
                    out.push((Slot::Rotation(i, c), g.d_rotation[i][c]));
                }
            }
        }
        ParamGroup::LogScale => {
            for i in 0..n {
                for c in 0..3 {
                    out.push((Slot::LogScale(i, c), g.d_log_scale[i][c]));
                }
            }
        }
        ParamGroup::Opacity => {
            for i in 0..n {
                out.push((Slot::Opacity(i), g.d_opacity_logit[i]));
            }
        }
        ParamGroup::Sh => {
            for k in 0..scene.sh_coeffs.len() {
                for c in 0..3 {
                    out.push((Slot::Sh(k, c), g.d_sh[k][c]));
                }
            }
        }
    }
    out
}

/// The ordered (pixel, Gaussian) contribution pattern of a render.
fn signature(out: &RenderOutput) -> Vec<u32> {
    let rec = out.contributors.as_ref().expect("probe renders retain contributors");
    let mut sig = Vec::with_capacity(rec.total() + rec.pixel_count());
    for p in 0..rec.pixel_count() {
        sig.push(rec.pixel(p).len() as u32);
        sig.extend(rec.pixel(p).iter().map(|c| c.source_index));
    }
    sig
}

/// Seeded random degree-0 scene of `count` Gaussians clustered around the
/// origin, sized to cover a few pixels each at `16x16`, radius 3 and 50
/// degrees field of view.
pub fn random_scene(count: usize, seed: u64) -> GaussianScene {
    let mut r = rng::stream(seed, "gradcheck-scene");
    let mut scene = GaussianScene::empty(0);
    for _ in 0..count {
        let position = Vector3::new(r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6), r.gen_range(-0.6..0.6));
        let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let rotation = if axis.norm() > 1e-3 {
            quat_from_axis_angle(&axis, r.gen_range(0.0..std::f64::consts::PI))
        } else {
            crate::gaussian::identity_quat()
        };
        let log_scale = Vector3::new(
            r.gen_range(0.12f64..0.35).ln(),
            r.gen_range(0.12f64..0.35).ln(),
            r.gen_range(0.12f64..0.35).ln(),
        );
        let opacity_logit = logit(r.gen_range(0.3..0.9));
        // Keep colors away from the clamp so the probe stays smooth.
        let rgb = Vector3::new(r.gen_range(0.15..0.85), r.gen_range(0.15..0.85), r.gen_range(0.15..0.85));
        scene
            .push(Gaussian { position, rotation, log_scale, opacity_logit, sh: vec![crate::sh::rgb_to_dc(rgb)] })
            .expect("degree-0 gaussian");
    }
    scene
}

/// The 8-Gaussian scene used by the CLI's default gradient check.
pub fn acceptance_scene() -> GaussianScene {
    random_scene(8, 2024)
}
