//! Rigid poses and pinhole camera intrinsics.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const ROTATION_TOL: f64 = 1e-6;

/// Rotation + translation of the target in the camera frame.
///
/// The rotation must be orthonormal (`RᵀR = I` within `1e-6`) with
/// `det(R) = +1` within the same tolerance; translation is in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseRecord {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl PoseRecord {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let gram = rotation.transpose() * rotation;
        let ortho_err = (gram - Matrix3::identity()).abs().max();
        if ortho_err > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |RᵀR - I| = {ortho_err:.3e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation determinant {det} is not +1"
            )));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies the pose to a point: `R x + t`.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Left-composition: `other ∘ self` (apply `self` first).
    pub fn compose_left(&self, other: &PoseRecord) -> PoseRecord {
        PoseRecord {
            rotation: other.rotation * self.rotation,
            translation: other.rotation * self.translation + other.translation,
        }
    }

    /// Row-major 3x3 rotation as nested arrays (the on-disk convention).
    pub fn rotation_rows(&self) -> [[f64; 3]; 3] {
        let r = &self.rotation;
        [
            [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
            [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
            [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
        ]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }

    /// Builds a pose from row-major rotation rows and a translation array,
    /// validating the rotation.
    pub fn from_rows(rows: [[f64; 3]; 3], t: [f64; 3]) -> Result<Self> {
        let rotation = Matrix3::new(
            rows[0][0], rows[0][1], rows[0][2], //
            rows[1][0], rows[1][1], rows[1][2], //
            rows[2][0], rows[2][1], rows[2][2],
        );
        Self::new(rotation, Vector3::new(t[0], t[1], t[2]))
    }
}

/// Pinhole intrinsics in pixels plus the image size they refer to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if cx < 0.0 || cx >= width as f64 || cy < 0.0 || cy >= height as f64 {
            return Err(Error::InvalidArgument(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Projects a camera-frame point to pixel coordinates. Returns `None` for
    /// points at or behind the camera plane.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        if p.z <= 1e-9 {
            return None;
        }
        Some((
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;

    #[test]
    fn accepts_proper_rotation() {
        let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let pose = PoseRecord::new(*r.matrix(), Vector3::new(0.1, 0.2, 3.0));
        assert!(pose.is_ok());
    }

    #[test]
    fn rejects_scaled_rotation() {
        let r = Matrix3::identity() * 1.001;
        assert!(PoseRecord::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn rejects_reflection() {
        // Orthonormal but det = -1.
        let mut r = Matrix3::identity();
        r[(0, 0)] = -1.0;
        let err = PoseRecord::new(r, Vector3::zeros());
        assert!(err.is_err());
    }

    #[test]
    fn rejects_det_outside_tolerance() {
        // Slightly scale one axis so det differs from 1 by more than 1e-6.
        let mut r = Matrix3::identity();
        r[(2, 2)] = 1.0 + 5e-6;
        assert!(PoseRecord::new(r, Vector3::zeros()).is_err());
    }

    #[test]
    fn transform_point_applies_rotation_then_translation() {
        let r = Rotation3::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let pose = PoseRecord::new(*r.matrix(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let p = pose.transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert!((p - Vector3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn rows_round_trip() {
        let r = Rotation3::from_euler_angles(0.5, 0.2, -0.7);
        let pose = PoseRecord::new(*r.matrix(), Vector3::new(-0.3, 0.1, 4.2)).unwrap();
        let back = PoseRecord::from_rows(pose.rotation_rows(), pose.translation_array()).unwrap();
        assert_eq!(pose, back);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).is_ok());
        assert!(CameraIntrinsics::new(0.0, 100.0, 32.0, 32.0, 64, 64).is_err());
        assert!(CameraIntrinsics::new(100.0, 100.0, 65.0, 32.0, 64, 64).is_err());
    }

    #[test]
    fn projection_rejects_points_behind_camera() {
        let k = CameraIntrinsics::new(100.0, 100.0, 32.0, 32.0, 64, 64).unwrap();
        assert!(k.project(&Vector3::new(0.0, 0.0, -1.0)).is_none());
        let (u, v) = k.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert!((u - 32.0).abs() < 1e-12 && (v - 32.0).abs() < 1e-12);
    }
}
