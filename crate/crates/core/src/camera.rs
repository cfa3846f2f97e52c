//! Camera models shared by the scene, objective and geometry modules.
//!
//! A Euclidean pose stores the world-to-camera rotation `R` and the camera
//! center `c`; a world point `X` maps to camera coordinates `R (X - c)`.
//! Projective cameras are general 3×4 matrices acting on `(X, 1)`.

use nalgebra::{Matrix3, Matrix3x4, Quaternion, UnitQuaternion, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Euclidean,
    Projective,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Euclidean => f.write_str("euclidean"),
            Mode::Projective => f.write_str("projective"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euclidean" => Ok(Mode::Euclidean),
            "projective" => Ok(Mode::Projective),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub center: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, center: Vector3<f64>) -> Self {
        Self { rotation, center }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    /// Quaternion as `[w, x, y, z]`.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Builds a pose from `[w, x, y, z]` without renormalizing, so stored
    /// values round-trip bit-exactly.
    pub fn from_wxyz_unchecked(q: [f64; 4], center: [f64; 3]) -> Self {
        Self::new(
            UnitQuaternion::new_unchecked(Quaternion::new(q[0], q[1], q[2], q[3])),
            Vector3::from(center),
        )
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// World point to camera coordinates.
    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// `[R | -R c]`.
    pub fn matrix(&self) -> Matrix3x4<f64> {
        let r = self.rotation_matrix();
        let t = -r * self.center;
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        p.set_column(3, &t);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Camera {
    Euclidean(Pose),
    Projective(Matrix3x4<f64>),
}

impl Camera {
    pub fn mode(&self) -> Mode {
        match self {
            Camera::Euclidean(_) => Mode::Euclidean,
            Camera::Projective(_) => Mode::Projective,
        }
    }

    pub fn matrix(&self) -> Matrix3x4<f64> {
        match self {
            Camera::Euclidean(pose) => pose.matrix(),
            Camera::Projective(p) => *p,
        }
    }

    /// Camera-frame coordinates `z`; the depth is `z[2]`.
    pub fn transform(&self, point: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Camera::Euclidean(pose) => pose.transform(point),
            Camera::Projective(p) => p * Vector4::new(point.x, point.y, point.z, 1.0),
        }
    }

    pub fn pose(&self) -> Option<&Pose> {
        match self {
            Camera::Euclidean(pose) => Some(pose),
            Camera::Projective(_) => None,
        }
    }
}

/// Perspective division `(z1 / z3, z2 / z3)`.
pub fn dehomogenize(z: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(z.x / z.z, z.y / z.z)
}

/// Scales a 3×4 camera to unit Frobenius norm, with the sign chosen so its
/// largest-magnitude entry is positive.
pub fn normalize_projective(p: &Matrix3x4<f64>) -> Matrix3x4<f64> {
    let norm = p.norm();
    if norm == 0.0 {
        return *p;
    }
    let largest = p
        .iter()
        .copied()
        .fold(0.0_f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
    let sign = if largest < 0.0 { -1.0 } else { 1.0 };
    p * (sign / norm)
}
