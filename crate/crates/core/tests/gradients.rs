mod common;

use common::{camera, random_image};
use nalgebra::Vector3;
use splatsketch::gaussian::{identity_quat, logit, Gaussian, GaussianScene};
use splatsketch::grad::render_backward;
use splatsketch::gradcheck::{acceptance_scene, finite_diff_check, random_scene, ParamGroup, MAX_GRADCHECK_GAUSSIANS};
use splatsketch::image::Image;
use splatsketch::render::{render, RenderConfig};
use splatsketch::sh::rgb_to_dc;
use splatsketch::Error;

fn retained() -> RenderConfig {
    RenderConfig { retain_contributors: true, ..Default::default() }
}

#[test]
fn acceptance_scene_passes_every_group() {
    let (ext, intr) = camera(16, 0.0);
    let report = finite_diff_check(&acceptance_scene(), &ext, &intr, &RenderConfig::default(), 0).unwrap();
    assert!(report.passed(), "{report}");
    for g in ParamGroup::ALL {
        assert!(report.group(g).checked > 0, "{g:?} had nothing to check");
    }
}

#[test]
fn report_is_deterministic() {
    let (ext, intr) = camera(16, 30.0);
    let scene = random_scene(5, 3);
    let a = finite_diff_check(&scene, &ext, &intr, &RenderConfig::default(), 9).unwrap();
    let b = finite_diff_check(&scene, &ext, &intr, &RenderConfig::default(), 9).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oversized_scene_rejected() {
    let (ext, intr) = camera(16, 0.0);
    let scene = random_scene(MAX_GRADCHECK_GAUSSIANS + 1, 1);
    assert!(matches!(
        finite_diff_check(&scene, &ext, &intr, &RenderConfig::default(), 0),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let scene = random_scene(6, 4);
    let (ext, intr) = camera(16, 0.0);
    let out = render(&scene, &ext, &intr, &retained()).unwrap();
    let g = render_backward(&scene, &ext, &intr, &retained(), &out, &Image::new(16, 16)).unwrap();
    assert!(g.values().all(|v| v == 0.0));
}

#[test]
fn missing_records_is_precondition_error() {
    let scene = random_scene(2, 5);
    let (ext, intr) = camera(16, 0.0);
    let out = render(&scene, &ext, &intr, &RenderConfig::default()).unwrap();
    let r = render_backward(&scene, &ext, &intr, &RenderConfig::default(), &out, &Image::new(16, 16));
    assert!(matches!(r, Err(Error::Precondition(_))));
}

#[test]
fn backward_is_linear_in_upstream() {
    let scene = random_scene(7, 6);
    let (ext, intr) = camera(16, 45.0);
    let cfg = retained();
    let out = render(&scene, &ext, &intr, &cfg).unwrap();
    let g1 = random_image(16, 16, 1).map(|v| v - 0.5);
    let g2 = random_image(16, 16, 2).map(|v| v - 0.5);
    let mut mix = g1.scale(2.0);
    mix.add_scaled(&g2, -3.0);
    let b1 = render_backward(&scene, &ext, &intr, &cfg, &out, &g1).unwrap();
    let b2 = render_backward(&scene, &ext, &intr, &cfg, &out, &g2).unwrap();
    let bm = render_backward(&scene, &ext, &intr, &cfg, &out, &mix).unwrap();
    let mut expect = b1.clone();
    expect.scale(2.0);
    expect.add_scaled(&b2, -3.0);
    for (a, b) in bm.values().zip(expect.values()) {
        assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
    }
}

fn splat(z: f64, opacity: f64, rgb: [f64; 3], scale: f64) -> Gaussian {
    Gaussian {
        position: Vector3::new(0.0, 0.0, z),
        rotation: identity_quat(),
        log_scale: Vector3::repeat(scale.ln()),
        opacity_logit: logit(opacity),
        sh: vec![rgb_to_dc(Vector3::new(rgb[0], rgb[1], rgb[2]))],
    }
}

#[test]
fn single_centered_gaussian_opacity_gradient() {
    // Odd resolution puts a pixel center on the optical axis, where G = 1.
    let scene = GaussianScene::from_gaussians(0, [splat(0.0, 0.4, [0.7, 0.2, 0.1], 0.3)]).unwrap();
    let (ext, intr) = camera(15, 0.0);
    let cfg = RenderConfig { background: Vector3::zeros(), retain_contributors: true, ..Default::default() };
    let out = render(&scene, &ext, &intr, &cfg).unwrap();
    let mut d = Image::new(15, 15);
    d.set(7, 7, [1.0, 0.0, 0.0]);
    let g = render_backward(&scene, &ext, &intr, &cfg, &out, &d).unwrap();
    // d/d(alpha) = c_red * G, then the sigmoid derivative.
    let expect = 0.7 * 0.4 * 0.6;
    assert!((g.d_opacity_logit[0] - expect).abs() < 1e-12, "{}", g.d_opacity_logit[0]);
}

#[test]
fn fully_occluded_gaussian_gets_no_gradient() {
    // A wide, near-opaque wall drives transmittance below the termination
    // threshold before the small Gaussian behind it is reached.
    let mut wall = splat(1.0, 1.0 - 1e-12, [0.2, 0.3, 0.4], 1000.0);
    wall.log_scale.z = 0.01f64.ln();
    let hidden = splat(-0.5, 0.8, [0.9, 0.1, 0.1], 0.1);
    let scene = GaussianScene::from_gaussians(0, [wall, hidden]).unwrap();
    let (ext, intr) = camera(16, 0.0);
    let cfg = RenderConfig { retain_contributors: true, ..RenderConfig::default() };
    let out = render(&scene, &ext, &intr, &cfg).unwrap();
    let d = random_image(16, 16, 3);
    let g = render_backward(&scene, &ext, &intr, &cfg, &out, &d).unwrap();
    let tiny = 0.0;
    assert!(g.d_position[1].norm() <= tiny);
    assert!(g.d_log_scale[1].norm() <= tiny);
    assert!(g.d_opacity_logit[1].abs() <= tiny);
    assert!(g.d_sh[1].norm() <= tiny);
}
