//! Real spherical-harmonics basis up to degree 3 and view-dependent color.

use nalgebra::Vector3;

use crate::error::{invalid, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: usize = 3;

/// Number of coefficients per color channel for `degree`.
pub const fn coeff_count(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// Basis values `Y_lm(dir)` in the usual splatting order; entries past
/// `coeff_count(degree)` are zero.
pub fn basis(dir: &Vector3<f64>, degree: usize) -> [f64; 16] {
    let mut y = [0.0; 16];
    y[0] = SH_C0;
    if degree == 0 {
        return y;
    }
    let (x, yy, z) = (dir.x, dir.y, dir.z);
    y[1] = -SH_C1 * yy;
    y[2] = SH_C1 * z;
    y[3] = -SH_C1 * x;
    if degree == 1 {
        return y;
    }
    let (xx, y2, zz) = (x * x, yy * yy, z * z);
    let (xy, yz, xz) = (x * yy, yy * z, x * z);
    y[4] = SH_C2[0] * xy;
    y[5] = SH_C2[1] * yz;
    y[6] = SH_C2[2] * (2.0 * zz - xx - y2);
    y[7] = SH_C2[3] * xz;
    y[8] = SH_C2[4] * (xx - y2);
    if degree == 2 {
        return y;
    }
    y[9] = SH_C3[0] * yy * (3.0 * xx - y2);
    y[10] = SH_C3[1] * xy * z;
    y[11] = SH_C3[2] * yy * (4.0 * zz - xx - y2);
    y[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * y2);
    y[13] = SH_C3[4] * x * (4.0 * zz - xx - y2);
    y[14] = SH_C3[5] * z * (xx - y2);
    y[15] = SH_C3[6] * x * (xx - 3.0 * y2);
    y
}

/// Unclamped color `0.5 + sum Y_lm c_lm`.
pub(crate) fn raw_color(coeffs: &[Vector3<f64>], y: &[f64; 16], degree: usize) -> Vector3<f64> {
    let mut c = Vector3::repeat(0.5);
    for (k, coeff) in coeffs.iter().take(coeff_count(degree)).enumerate() {
        c += coeff * y[k];
    }
    c
}

/// Evaluates the view-dependent color of one Gaussian, clamped to `[0, 1]`.
pub fn sh_eval(coeffs: &[Vector3<f64>], view_dir: &Vector3<f64>, degree: usize) -> Result<Vector3<f64>> {
    if degree > MAX_SH_DEGREE {
        return Err(invalid(format!("sh degree {degree} exceeds {MAX_SH_DEGREE}")));
    }
    let need = coeff_count(degree);
    if coeffs.len() < need {
        return Err(invalid(format!(
            "degree {degree} needs {need} sh coefficients, got {}",
            coeffs.len()
        )));
    }
    let y = basis(view_dir, degree);
    Ok(raw_color(coeffs, &y, degree).map(|v| v.clamp(0.0, 1.0)))
}

/// Degree-0 coefficient reproducing `rgb` (inverse of the mid-gray offset).
pub fn rgb_to_dc(rgb: Vector3<f64>) -> Vector3<f64> {
    (rgb - Vector3::repeat(0.5)) / SH_C0
}
