//! Orbit cameras, pinhole projection and the dual-circle pose schedule.
//!
//! World frame is right-handed with +y up; horizontal angle 0 puts the
//! camera on +z looking at the origin. Camera space follows the usual
//! computer-vision convention: +x right, +y down, +z forward.

use nalgebra::{Matrix2x3, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Points closer than this (camera-space z) are culled.
pub const NEAR_PLANE: f64 = 0.01;

/// Weight applied to vertical-circle poses relative to horizontal ones.
pub const VERTICAL_POSE_FACTOR: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    /// Vertical field of view in degrees.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fov_y: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self { fov_y, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < 180.0) {
            return Err(invalid(format!("fov_y {} outside (0, 180)", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("image dimensions must be at least 1"));
        }
        Ok(())
    }

    /// Focal length in pixels (square pixels).
    pub fn focal(&self) -> f64 {
        0.5 * self.height as f64 / (0.5 * self.fov_y.to_radians()).tan()
    }

    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(0.5 * self.width as f64, 0.5 * self.height as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Circle {
    Horizontal,
    Vertical,
}

impl Circle {
    pub fn prefix(self) -> char {
        match self {
            Circle::Horizontal => 'h',
            Circle::Vertical => 'v',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitPose {
    pub circle: Circle,
    /// Degrees in `[0, 360)`.
    pub angle: f64,
    pub radius: f64,
}

impl OrbitPose {
    pub fn new(circle: Circle, angle: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid(format!("orbit radius must be positive, got {radius}")));
        }
        if !angle.is_finite() {
            return Err(invalid("orbit angle must be finite"));
        }
        Ok(Self { circle, angle: angle.rem_euclid(360.0), radius })
    }

    pub fn horizontal(angle: f64, radius: f64) -> Self {
        Self { circle: Circle::Horizontal, angle, radius }
    }

    pub fn vertical(angle: f64, radius: f64) -> Self {
        Self { circle: Circle::Vertical, angle, radius }
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vector3<f64> {
        let (s, c) = self.angle.to_radians().sin_cos();
        match self.circle {
            Circle::Horizontal => Vector3::new(s, 0.0, c) * self.radius,
            Circle::Vertical => Vector3::new(0.0, s, c) * self.radius,
        }
    }

    /// Up vector parallel-transported along the circle.
    fn up(&self) -> Vector3<f64> {
        match self.circle {
            Circle::Horizontal => Vector3::y(),
            Circle::Vertical => {
                let (s, c) = self.angle.to_radians().sin_cos();
                Vector3::new(0.0, c, -s)
            }
        }
    }
}

/// World-to-camera rigid transform: `p_cam = rotation * p_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.row(2).transpose()
    }
}

pub fn orbit_to_extrinsics(pose: &OrbitPose) -> CameraExtrinsics {
    let center = pose.center();
    let forward = -center.normalize();
    let up = pose.up();
    let right = forward.cross(&up).normalize();
    let down = forward.cross(&right);
    let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
    CameraExtrinsics { rotation, translation: -(rotation * center) }
}

/// Horizontal circle poses followed by vertical circle poses, every
/// `step_degrees`.
pub fn pose_schedule(step_degrees: u32, radius: f64) -> Result<Vec<OrbitPose>> {
    if step_degrees == 0 || 360 % step_degrees != 0 {
        return Err(invalid(format!("step {step_degrees} does not divide 360")));
    }
    let angles: Vec<f64> = (0..360 / step_degrees).map(|k| f64::from(k * step_degrees)).collect();
    let mut poses = Vec::with_capacity(angles.len() * 2);
    for circle in [Circle::Horizontal, Circle::Vertical] {
        for &a in &angles {
            poses.push(OrbitPose::new(circle, a, radius)?);
        }
    }
    Ok(poses)
}

/// Color-loss weight for a pose, clamped to `[0, 1]`.
pub fn pose_weight(pose: &OrbitPose) -> f64 {
    pose_weight_raw(pose).max(0.0)
}

/// Unclamped `cos(angle)` (horizontal) or `0.3 cos(angle)` (vertical).
pub fn pose_weight_raw(pose: &OrbitPose) -> f64 {
    let c = pose.angle.to_radians().cos();
    match pose.circle {
        Circle::Horizontal => c,
        Circle::Vertical => VERTICAL_POSE_FACTOR * c,
    }
}

/// Projects a world point to pixel coordinates; `None` if it lies behind the
/// near plane.
pub fn project_point(
    point: &Vector3<f64>,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
) -> Option<(Vector2<f64>, f64)> {
    let t = extrinsics.to_camera(point);
    project_camera_point(&t, intrinsics).map(|uv| (uv, t.z))
}

pub(crate) fn project_camera_point(t: &Vector3<f64>, intrinsics: &CameraIntrinsics) -> Option<Vector2<f64>> {
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let f = intrinsics.focal();
    Some(Vector2::new(f * t.x / t.z, f * t.y / t.z) + intrinsics.principal_point())
}

/// Jacobian of pixel coordinates with respect to the camera-space point.
pub fn projection_jacobian(
    point: &Vector3<f64>,
    extrinsics: &CameraExtrinsics,
    intrinsics: &CameraIntrinsics,
) -> Option<Matrix2x3<f64>> {
    let t = extrinsics.to_camera(point);
    (t.z > NEAR_PLANE).then(|| camera_jacobian(&t, intrinsics.focal()))
}

pub(crate) fn camera_jacobian(t: &Vector3<f64>, f: f64) -> Matrix2x3<f64> {
    let iz = 1.0 / t.z;
    Matrix2x3::new(f * iz, 0.0, -f * t.x * iz * iz, 0.0, f * iz, -f * t.y * iz * iz)
}
