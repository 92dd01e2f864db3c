use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{invalid, Result};
use crate::gaussian::{identity_quat, logit, Gaussian, GaussianScene};
use crate::rng;
use crate::sh::rgb_to_dc;

/// Opacity given to freshly initialized Gaussians.
pub const INIT_OPACITY: f64 = 0.1;

/// One isotropic Gaussian per point, sized by the mean distance to its
/// three nearest neighbours. Missing colors default to mid-gray.
pub fn init_from_pointcloud(points: &[Vector3<f64>], colors: Option<&[Vector3<f64>]>) -> Result<GaussianScene> {
    if points.is_empty() {
        return Err(invalid("point cloud is empty"));
    }
    if let Some(c) = colors {
        if c.len() != points.len() {
            return Err(invalid(format!("{} colors for {} points", c.len(), points.len())));
        }
    }
    let gaussians = points.iter().enumerate().map(|(i, p)| {
        let mut d: Vec<f64> = points
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (p - q).norm())
            .collect();
        d.sort_by(f64::total_cmp);
        let near = &d[..d.len().min(3)];
        // A lone point gets unit scale.
        let s = if near.is_empty() { 1.0 } else { near.iter().sum::<f64>() / near.len() as f64 };
        let s = s.max(1e-7);
        let color = colors.map_or(Vector3::repeat(0.5), |c| c[i]);
        Gaussian {
            position: *p,
            rotation: identity_quat(),
            log_scale: Vector3::repeat(s.ln()),
            opacity_logit: logit(INIT_OPACITY),
            sh: vec![rgb_to_dc(color)],
        }
    });
    GaussianScene::from_gaussians(0, gaussians)
}

/// `count` Gaussians uniform in a ball, unit scale, identity rotation,
/// mid-gray.
pub fn init_sphere(count: usize, radius: f64, seed: u64) -> Result<GaussianScene> {
    if count == 0 {
        return Err(invalid("init_sphere needs at least one Gaussian"));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("sphere radius {radius} must be positive")));
    }
    let mut r = rng::stream(seed, "init-sphere");
    let gaussians: Vec<Gaussian> = (0..count)
        .map(|_| {
            let dir = loop {
                let v = Vector3::from_fn(|_, _| StandardNormal.sample(&mut r));
                let n: f64 = v.norm();
                if n > 1e-12 {
                    break v / n;
                }
            };
            let u: f64 = r.gen();
            Gaussian {
                position: dir * radius * u.cbrt(),
                rotation: identity_quat(),
                log_scale: Vector3::zeros(),
                opacity_logit: logit(INIT_OPACITY),
                sh: vec![Vector3::zeros()],
            }
        })
        .collect();
    GaussianScene::from_gaussians(0, gaussians)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray_point() {
        let s = init_from_pointcloud(&[Vector3::zeros()], Some(&[Vector3::repeat(0.5)])).unwrap();
        assert_eq!(s.len(), 1);
        assert!(s.sh(0)[0].norm() < 1e-15);
        assert!((s.opacity(0) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_points_share_distance() {
        let pts = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(0.0, 0.7, 0.0)];
        let s = init_from_pointcloud(&pts, None).unwrap();
        for i in 0..2 {
            assert!((s.scale(i) - Vector3::repeat(0.7)).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_cloud_rejected() {
        assert!(init_from_pointcloud(&[], None).is_err());
        assert!(init_from_pointcloud(&[Vector3::zeros()], Some(&[])).is_err());
    }

    #[test]
    fn sphere_samples_ball() {
        let s = init_sphere(10_000, 1.0, 7).unwrap();
        assert!(s.positions.iter().all(|p| p.norm() <= 1.0));
        let mean = s.positions.iter().map(|p| p.norm()).sum::<f64>() / 10_000.0;
        assert!((mean - 0.75).abs() < 0.02 * 0.75, "mean radius {mean}");
        assert_eq!(s, init_sphere(10_000, 1.0, 7).unwrap());
        assert!(s.log_scales.iter().all(|l| *l == Vector3::zeros()));
    }
}
