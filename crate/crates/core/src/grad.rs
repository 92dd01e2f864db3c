//! Analytic backward pass of the splatting renderer.
//!
//! Given `dL/d(image)`, produces `dL/d(theta)` for every Gaussian parameter
//! group by differentiating compositing, the 2D falloff, the EWA projection,
//! the covariance factorization, color evaluation and the activations. The
//! view direction used for color is treated as constant.

use nalgebra::{Matrix2, Matrix3, Matrix2x3, Vector3, Vector4};
use rayon::prelude::*;

use crate::camera::{CameraExtrinsics, CameraIntrinsics};
use crate::error::{invalid, Error, Result};
use crate::gaussian::GaussianScene;
use crate::image::Image;
use crate::render::{
    bin_tiles, depth_order, pixel_center, project_all, Projection, RenderConfig, RenderOutput,
};
use crate::sh::coeff_count;

/// Per-Gaussian gradients mirroring [`GaussianScene`]'s layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub d_position: Vec<Vector3<f64>>,
    /// Ambient 4-vector gradient of the stored quaternion `(w, x, y, z)`.
    pub d_rotation: Vec<Vector4<f64>>,
    pub d_log_scale: Vec<Vector3<f64>>,
    pub d_opacity_logit: Vec<f64>,
    pub d_sh: Vec<Vector3<f64>>,
}

impl GradientSet {
    pub fn zeros_like(scene: &GaussianScene) -> Self {
        let n = scene.len();
        Self {
            d_position: vec![Vector3::zeros(); n],
            d_rotation: vec![Vector4::zeros(); n],
            d_log_scale: vec![Vector3::zeros(); n],
            d_opacity_logit: vec![0.0; n],
            d_sh: vec![Vector3::zeros(); scene.sh_coeffs.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    pub fn matches(&self, scene: &GaussianScene) -> bool {
        let n = scene.len();
        self.d_position.len() == n
            && self.d_rotation.len() == n
            && self.d_log_scale.len() == n
            && self.d_opacity_logit.len() == n
            && self.d_sh.len() == scene.sh_coeffs.len()
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, k: f64) {
        for (a, b) in self.d_position.iter_mut().zip(&other.d_position) {
            *a += b * k;
        }
        for (a, b) in self.d_rotation.iter_mut().zip(&other.d_rotation) {
            *a += b * k;
        }
        for (a, b) in self.d_log_scale.iter_mut().zip(&other.d_log_scale) {
            *a += b * k;
        }
        for (a, b) in self.d_opacity_logit.iter_mut().zip(&other.d_opacity_logit) {
            *a += b * k;
        }
        for (a, b) in self.d_sh.iter_mut().zip(&other.d_sh) {
            *a += b * k;
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.d_position.iter_mut().for_each(|v| *v *= k);
        self.d_rotation.iter_mut().for_each(|v| *v *= k);
        self.d_log_scale.iter_mut().for_each(|v| *v *= k);
        self.d_opacity_logit.iter_mut().for_each(|v| *v *= k);
        self.d_sh.iter_mut().for_each(|v| *v *= k);
    }

    /// Every entry, group by group, in a fixed order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.d_position
            .iter()
            .flat_map(|v| v.iter().copied())
            .chain(self.d_rotation.iter().flat_map(|v| v.iter().copied()))
            .chain(self.d_log_scale.iter().flat_map(|v| v.iter().copied()))
            .chain(self.d_opacity_logit.iter().copied())
            .chain(self.d_sh.iter().flat_map(|v| v.iter().copied()))
    }

    /// Describes the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        let groups: [(&str, Vec<f64>); 5] = [
            ("position", self.d_position.iter().flat_map(|v| v.iter().copied()).collect()),
            ("rotation", self.d_rotation.iter().flat_map(|v| v.iter().copied()).collect()),
            ("log_scale", self.d_log_scale.iter().flat_map(|v| v.iter().copied()).collect()),
            ("opacity", self.d_opacity_logit.clone()),
            ("sh", self.d_sh.iter().flat_map(|v| v.iter().copied()).collect()),
        ];
        for (name, vals) in groups {
            if let Some((k, v)) = vals.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Some(format!("{name} entry {k} is {v}"));
            }
        }
        None
    }
}

/// Screen-space gradient accumulator for one splat:
/// center (2), conic entries a/b/c (3), activated opacity (1), color (3).
type SplatGrad = [f64; 9];

/// Gradients of `L = sum_pixels <d_image, rendered pixel>` with respect to
/// every scene parameter. `output` must come from `render` on the same
/// scene, camera and config with `retain_contributors` set.
pub fn render_backward(
    scene: &GaussianScene,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    config: &RenderConfig,
    output: &RenderOutput,
    d_image: &Image,
) -> Result<GradientSet> {
    let records = output.contributors.as_ref().ok_or_else(|| {
        Error::Precondition("render output has no contributor records; render with retain_contributors".into())
    })?;
    if d_image.width() != intrinsics.width || d_image.height() != intrinsics.height {
        return Err(invalid("d_image dimensions differ from the camera"));
    }
    if records.pixel_count() != intrinsics.width * intrinsics.height {
        return Err(Error::Precondition("contributor records do not match the camera resolution".into()));
    }
    if !d_image.is_finite() {
        return Err(invalid("d_image contains non-finite values"));
    }

    let projections = project_all(scene, extrinsics, intrinsics, config);
    let order = depth_order(&projections);
    let (tiles, lists) = bin_tiles(&projections, &order, intrinsics, config.tile_size);
    let w = intrinsics.width;
    let bg = config.background;
    let n = scene.len();

    // Each tile accumulates into a buffer indexed by its own splat list;
    // buffers are then reduced in tile order so the sum is bit-stable.
    let partials: Vec<Vec<SplatGrad>> = tiles
        .par_iter()
        .zip(lists.par_iter())
        .map_init(
            || vec![u32::MAX; n],
            |slot, (tile, list)| {
                for (k, &i) in list.iter().enumerate() {
                    slot[i] = k as u32;
                }
                let mut acc = vec![[0.0; 9]; list.len()];
                for (x, y) in tile.pixels() {
                    let p = y * w + x;
                    let recs = records.pixel(p);
                    if recs.is_empty() {
                        continue;
                    }
                    let d_out = Vector3::new(d_image.data()[p * 3], d_image.data()[p * 3 + 1], d_image.data()[p * 3 + 2]);
                    let pix = pixel_center(x, y);
                    // dL/dT after the last term: only the background sees it.
                    let mut g_t = d_out.dot(&bg);
                    for r in recs.iter().rev() {
                        let i = r.source_index as usize;
                        let s = &projections[i].as_ref().expect("contributors are visible").splat;
                        let local = slot[i];
                        debug_assert!(local != u32::MAX, "contributor outside tile list");
                        let e = &mut acc[local as usize];
                        let a = s.opacity * r.g;
                        let ti = r.transmittance;
                        let d_color = d_out * (a * ti);
                        let d_a = d_out.dot(&s.color) * ti - g_t * ti;
                        g_t = d_out.dot(&s.color) * a + g_t * (1.0 - a);

                        let d_g = d_a * s.opacity;
                        let dx = pix.x - s.center.x;
                        let dy = pix.y - s.center.y;
                        let q = &s.conic;
                        let qd0 = q[(0, 0)] * dx + q[(0, 1)] * dy;
                        let qd1 = q[(0, 1)] * dx + q[(1, 1)] * dy;
                        let dg_g = d_g * r.g;
                        e[0] += dg_g * qd0;
                        e[1] += dg_g * qd1;
                        e[2] += -0.5 * dg_g * dx * dx;
                        e[3] += -dg_g * dx * dy;
                        e[4] += -0.5 * dg_g * dy * dy;
                        e[5] += d_a * r.g;
                        e[6] += d_color.x;
                        e[7] += d_color.y;
                        e[8] += d_color.z;
                    }
                }
                for &i in list {
                    slot[i] = u32::MAX;
                }
                acc
            },
        )
        .collect();

    let mut splat_grads = vec![[0.0; 9]; n];
    for (list, acc) in lists.iter().zip(&partials) {
        for (&i, e) in list.iter().zip(acc) {
            for k in 0..9 {
                splat_grads[i][k] += e[k];
            }
        }
    }

    let k_sh = coeff_count(scene.sh_degree);
    let per_gaussian: Vec<Option<GaussianGrad>> = projections
        .par_iter()
        .zip(splat_grads.par_iter())
        .map(|(proj, sg)| proj.as_ref().map(|p| gaussian_backward(p, sg, extrinsics, intrinsics, k_sh)))
        .collect();

    let mut grads = GradientSet::zeros_like(scene);
    for (i, g) in per_gaussian.into_iter().enumerate() {
        let Some(g) = g else { continue };
        grads.d_position[i] = g.position;
        grads.d_rotation[i] = g.rotation;
        grads.d_log_scale[i] = g.log_scale;
        grads.d_opacity_logit[i] = g.opacity_logit;
        grads.d_sh[i * k_sh..(i + 1) * k_sh].copy_from_slice(&g.sh[..k_sh]);
    }
    Ok(grads)
}

struct GaussianGrad {
    position: Vector3<f64>,
    rotation: Vector4<f64>,
    log_scale: Vector3<f64>,
    opacity_logit: f64,
    sh: [Vector3<f64>; 16],
}

/// Chains screen-space splat gradients back to one Gaussian's parameters.
fn gaussian_backward(
    p: &Projection,
    sg: &SplatGrad,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
    k_sh: usize,
) -> GaussianGrad {
    let s = &p.splat;

    // Opacity through the sigmoid.
    let opacity_logit = sg[5] * s.opacity * (1.0 - s.opacity);

    // Color through the clamp and the SH basis.
    let mut d_color = Vector3::new(sg[6], sg[7], sg[8]);
    for c in 0..3 {
        if !(p.raw_color[c] > 0.0 && p.raw_color[c] < 1.0) {
            d_color[c] = 0.0;
        }
    }
    let mut sh = [Vector3::zeros(); 16];
    for (k, v) in sh.iter_mut().enumerate().take(k_sh) {
        *v = d_color * p.sh_basis[k];
    }

    // Conic -> 2D covariance: dL/dSigma = -Q M Q with M the symmetric
    // gradient with respect to Q.
    let m = Matrix2::new(sg[2], 0.5 * sg[3], 0.5 * sg[3], sg[4]);
    let d_cov2d = -(s.conic * m * s.conic);

    // 2D covariance -> 3D covariance and the Jacobian.
    let w = &extrinsics.rotation;
    let tm: Matrix2x3<f64> = p.jacobian * w;
    let d_cov3d: Matrix3<f64> = tm.transpose() * d_cov2d * tm;
    let d_tm: Matrix2x3<f64> = 2.0 * d_cov2d * tm * p.cov3d;
    let d_j: Matrix2x3<f64> = d_tm * w.transpose();

    let f = intrinsics.focal();
    let t = &p.cam_point;
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (du, dv) = (sg[0], sg[1]);
    let d_t = Vector3::new(
        du * f * iz - d_j[(0, 2)] * f * iz2,
        dv * f * iz - d_j[(1, 2)] * f * iz2,
        -du * f * t.x * iz2 - dv * f * t.y * iz2 - (d_j[(0, 0)] + d_j[(1, 1)]) * f * iz2
            + 2.0 * f * (d_j[(0, 2)] * t.x + d_j[(1, 2)] * t.y) * iz3,
    );
    let position = w.transpose() * d_t;

    // 3D covariance = M M^T with M = R S.
    let r = crate::gaussian::rotation_matrix(&p.unit_quat);
    let mm = r * Matrix3::from_diagonal(&p.scale);
    let d_m = 2.0 * d_cov3d * mm;
    let mut log_scale = Vector3::zeros();
    let mut d_r = Matrix3::zeros();
    for k in 0..3 {
        let mut ds = 0.0;
        for row in 0..3 {
            ds += d_m[(row, k)] * r[(row, k)];
            d_r[(row, k)] = d_m[(row, k)] * p.scale[k];
        }
        log_scale[k] = ds * p.scale[k];
    }

    let d_unit = rotation_backward(&p.unit_quat, &d_r);
    // Through q / |q|.
    let u = &p.unit_quat;
    let rotation = (d_unit - u * u.dot(&d_unit)) / p.quat_norm;

    GaussianGrad { position, rotation, log_scale, opacity_logit, sh }
}

/// Gradient with respect to `(w, x, y, z)` of `<d_r, R(q)>` for the
/// unit-quaternion rotation formula.
fn rotation_backward(q: &Vector4<f64>, d_r: &Matrix3<f64>) -> Vector4<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1))
        - 4.0 * x * (g(1, 1) + g(2, 2));
    let dy = 2.0 * (x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1))
        - 4.0 * y * (g(0, 0) + g(2, 2));
    let dz = 2.0 * (-w * g(0, 1) + x * g(0, 2) + w * g(1, 0) + y * g(1, 2) + x * g(2, 0) + y * g(2, 1))
        - 4.0 * z * (g(0, 0) + g(1, 1));
    Vector4::new(dw, dx, dy, dz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::rotation_matrix;

    #[test]
    fn rotation_backward_matches_finite_differences() {
        let q = Vector4::new(0.3, -0.5, 0.7, 0.2);
        let d_r = Matrix3::new(0.3, -1.2, 0.5, 0.9, 0.1, -0.4, 0.25, 0.6, -0.8);
        let analytic = rotation_backward(&q, &d_r);
        let h = 1e-6;
        for k in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[k] += h;
            qm[k] -= h;
            let fp = rotation_matrix(&qp).component_mul(&d_r).sum();
            let fm = rotation_matrix(&qm).component_mul(&d_r).sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[k]).abs() < 1e-8, "component {k}: {fd} vs {}", analytic[k]);
        }
    }
}
