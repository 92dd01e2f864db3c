//! Gaussian scene representation, parameter activations and covariance
//! construction.
//!
//! Parameters live in unconstrained domains: opacity as a logit, scale as a
//! log, so any optimizer update keeps the activated values valid. Rotations
//! are unit quaternions stored `(w, x, y, z)` and renormalized after updates.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{invalid, Result};
use crate::sh::{self, coeff_count, MAX_SH_DEGREE};

/// Tolerance on `|q| - 1` accepted by [`covariance_from`].
pub const QUAT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianScene {
    pub positions: Vec<Vector3<f64>>,
    /// Unit quaternions `(w, x, y, z)`.
    pub rotations: Vec<Vector4<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub opacity_logits: Vec<f64>,
    /// Flattened, `coeff_count(sh_degree)` entries per Gaussian.
    pub sh_coeffs: Vec<Vector3<f64>>,
    pub sh_degree: usize,
}

/// A single Gaussian's parameters, used to build scenes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub position: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub log_scale: Vector3<f64>,
    pub opacity_logit: f64,
    pub sh: Vec<Vector3<f64>>,
}

impl GaussianScene {
    pub fn empty(sh_degree: usize) -> Self {
        Self {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            sh_coeffs: Vec::new(),
            sh_degree,
        }
    }

    pub fn from_gaussians(sh_degree: usize, gaussians: impl IntoIterator<Item = Gaussian>) -> Result<Self> {
        let mut scene = Self::empty(sh_degree);
        for g in gaussians {
            scene.push(g)?;
        }
        Ok(scene)
    }

    pub fn push(&mut self, g: Gaussian) -> Result<()> {
        if g.sh.len() != self.coeffs_per_gaussian() {
            return Err(invalid(format!(
                "gaussian has {} sh coefficients, scene degree {} needs {}",
                g.sh.len(),
                self.sh_degree,
                self.coeffs_per_gaussian()
            )));
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.sh_coeffs.extend(g.sh);
        Ok(())
    }

    pub fn gaussian(&self, i: usize) -> Gaussian {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            sh: self.sh(i).to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn coeffs_per_gaussian(&self) -> usize {
        coeff_count(self.sh_degree)
    }

    pub fn sh(&self, i: usize) -> &[Vector3<f64>] {
        let k = self.coeffs_per_gaussian();
        &self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn sh_mut(&mut self, i: usize) -> &mut [Vector3<f64>] {
        let k = self.coeffs_per_gaussian();
        &mut self.sh_coeffs[i * k..(i + 1) * k]
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> Vector3<f64> {
        self.log_scales[i].map(f64::exp)
    }

    /// Checks the structural invariants: consistent lengths, supported
    /// degree, unit quaternions and finite values.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.sh_degree > MAX_SH_DEGREE {
            return Err(invalid(format!("sh degree {} exceeds {MAX_SH_DEGREE}", self.sh_degree)));
        }
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.sh_coeffs.len() != n * self.coeffs_per_gaussian()
        {
            return Err(invalid("scene parameter arrays have inconsistent lengths"));
        }
        for (i, q) in self.rotations.iter().enumerate() {
            if (q.norm() - 1.0).abs() > QUAT_NORM_TOLERANCE {
                return Err(invalid(format!("rotation {i} is not a unit quaternion (|q| = {})", q.norm())));
            }
        }
        let finite = self.positions.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.log_scales.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self.opacity_logits.iter().all(|x| !x.is_nan())
            && self.sh_coeffs.iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(invalid("scene contains non-finite parameters"));
        }
        Ok(())
    }

    pub fn renormalize_rotations(&mut self) {
        for q in &mut self.rotations {
            let n = q.norm();
            if n > 0.0 {
                *q /= n;
            } else {
                *q = identity_quat();
            }
        }
    }

    /// Keeps the Gaussians whose indices satisfy `keep`, in order.
    pub fn retain_indices(&self, keep: impl Fn(usize) -> bool) -> GaussianScene {
        let mut out = GaussianScene::empty(self.sh_degree);
        for i in (0..self.len()).filter(|&i| keep(i)) {
            out.positions.push(self.positions[i]);
            out.rotations.push(self.rotations[i]);
            out.log_scales.push(self.log_scales[i]);
            out.opacity_logits.push(self.opacity_logits[i]);
            out.sh_coeffs.extend_from_slice(self.sh(i));
        }
        out
    }
}

pub fn identity_quat() -> Vector4<f64> {
    Vector4::new(1.0, 0.0, 0.0, 0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Hamilton product `a * b` of `(w, x, y, z)` quaternions.
pub fn quat_mul(a: &Vector4<f64>, b: &Vector4<f64>) -> Vector4<f64> {
    Vector4::new(
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )
}

/// Unit quaternion for a rotation of `angle` radians about `axis`.
pub fn quat_from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Vector4<f64> {
    let a = axis.normalize() * (angle / 2.0).sin();
    Vector4::new((angle / 2.0).cos(), a.x, a.y, a.z)
}

/// `R S S^T R^T` for a unit quaternion and positive per-axis scale.
pub fn covariance_from(rotation: &Vector4<f64>, scale: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let norm = rotation.norm();
    if !((norm - 1.0).abs() <= QUAT_NORM_TOLERANCE) {
        return Err(invalid(format!("quaternion norm {norm} is not 1")));
    }
    if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
        return Err(invalid(format!("scale components must be positive, got {scale:?}")));
    }
    let m = rotation_matrix(rotation) * Matrix3::from_diagonal(scale);
    let cov = m * m.transpose();
    // Force exact symmetry; the product is symmetric only up to rounding.
    Ok((cov + cov.transpose()) * 0.5)
}

/// Drops Gaussians whose activated opacity is below `opacity_threshold`.
pub fn prune(scene: &GaussianScene, opacity_threshold: f64) -> GaussianScene {
    scene.retain_indices(|i| scene.opacity(i) >= opacity_threshold)
}

/// Activated view-dependent color of Gaussian `i` seen along `view_dir`.
pub fn gaussian_color(scene: &GaussianScene, i: usize, view_dir: &Vector3<f64>) -> Result<Vector3<f64>> {
    sh::sh_eval(scene.sh(i), view_dir, scene.sh_degree)
}
