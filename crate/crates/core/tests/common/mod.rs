#![allow(dead_code)]

use nalgebra::Vector3;
use rand::Rng;

use splatsketch::camera::{orbit_to_extrinsics, CameraExtrinsics, CameraIntrinsics, OrbitPose};
use splatsketch::gaussian::{logit, quat_from_axis_angle, Gaussian, GaussianScene};
use splatsketch::image::Image;
use splatsketch::rng;

pub fn camera(size: usize, angle: f64) -> (CameraExtrinsics, CameraIntrinsics) {
    (
        orbit_to_extrinsics(&OrbitPose::horizontal(angle, 3.0)),
        CameraIntrinsics::new(50.0, size, size).unwrap(),
    )
}

/// Random scene with scales large enough to overlap at 32x32.
pub fn overlap_scene(count: usize, seed: u64) -> GaussianScene {
    let mut r = rng::stream(seed, "test-scene");
    let mut scene = GaussianScene::empty(0);
    for _ in 0..count {
        let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(0.1..1.0));
        scene
            .push(Gaussian {
                position: Vector3::new(r.gen_range(-0.8..0.8), r.gen_range(-0.8..0.8), r.gen_range(-0.8..0.8)),
                rotation: quat_from_axis_angle(&axis, r.gen_range(0.0..3.0)),
                log_scale: Vector3::from_fn(|_, _| r.gen_range(0.05f64..0.5).ln()),
                opacity_logit: logit(r.gen_range(0.05..0.99)),
                sh: vec![Vector3::from_fn(|_, _| r.gen_range(-2.0..2.0))],
            })
            .unwrap();
    }
    scene
}

pub fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut r = rng::stream(seed, "test-image");
    Image::from_vec(w, h, (0..w * h * 3).map(|_| r.gen::<f64>()).collect()).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
