use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::camera::Pose;

/// Centers whose second singular value falls below this fraction of the
/// first are collinear.
pub const COLLINEAR_TOL: f64 = 1e-9;
/// Below this ratio the center-based rotation is poorly determined and is
/// refined from the camera rotations.
pub const NEAR_DEGENERATE_RATIO: f64 = 1e-3;

/// `x ↦ s·Q·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x * self.scale + self.translation
    }

    /// The pose seen from the transformed world frame: `R Qᵀ` and the
    /// transformed center.
    pub fn apply_pose(&self, pose: &Pose) -> Pose {
        Pose::new(pose.rotation * self.rotation.inverse(), self.apply(&pose.center))
    }
}

fn centered(points: &[Vector3<f64>]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let mean = points.iter().sum::<Vector3<f64>>() / points.len() as f64;
    (mean, points.iter().map(|p| p - mean).collect())
}

fn spread_ratio(centered: &[Vector3<f64>]) -> (f64, f64) {
    let scatter: Matrix3<f64> = centered.iter().map(|a| a * a.transpose()).sum();
    let mut ev: Vec<f64> = scatter.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let s1 = ev[0].max(0.0).sqrt();
    let s2 = ev[1].max(0.0).sqrt();
    (s1, if s1 > 0.0 { s2 / s1 } else { 0.0 })
}

fn project_to_so3(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Least-squares similarity taking the estimated camera centers onto the
/// ground-truth ones (Umeyama's closed form).
///
/// When the centers are nearly collinear the rotation about their common
/// line is poorly determined; it is then taken from the chordal mean of
/// `R_gt,iᵀ R_est,i` and scale and translation re-fit for it.
pub fn align_similarity(est: &[Pose], gt: &[Pose]) -> Result<SimilarityTransform, GeometryError> {
    if est.len() != gt.len() {
        return Err(GeometryError::DimMismatch {
            what: "poses",
            found: est.len(),
            expected: gt.len(),
        });
    }
    if est.len() < 3 {
        return Err(GeometryError::DegenerateAlignment("fewer than 3 cameras"));
    }
    let a: Vec<Vector3<f64>> = est.iter().map(|p| p.center).collect();
    let b: Vec<Vector3<f64>> = gt.iter().map(|p| p.center).collect();
    if a.iter().chain(&b).any(|v| !v.iter().all(|x| x.is_finite())) {
        return Err(GeometryError::NonFinite("camera center"));
    }
    let (mu_a, ca) = centered(&a);
    let (mu_b, cb) = centered(&b);
    for c in [&ca, &cb] {
        let (s1, ratio) = spread_ratio(c);
        if s1 == 0.0 || ratio < COLLINEAR_TOL {
            return Err(GeometryError::DegenerateAlignment("collinear or coincident camera centers"));
        }
    }
    let n = a.len() as f64;
    let var_a = ca.iter().map(|v| v.norm_squared()).sum::<f64>() / n;
    let sigma: Matrix3<f64> = cb.iter().zip(&ca).map(|(y, x)| y * x.transpose()).sum::<Matrix3<f64>>() / n;
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let d = (u.determinant() * v_t.determinant()).signum();
    let sdiag = Vector3::new(1.0, 1.0, d);
    let mut q = u * Matrix3::from_diagonal(&sdiag) * v_t;
    let mut scale = svd.singular_values.dot(&sdiag) / var_a;

    if spread_ratio(&ca).1 < NEAR_DEGENERATE_RATIO {
        let chordal: Matrix3<f64> = est
            .iter()
            .zip(gt)
            .map(|(e, g)| g.rotation_matrix().transpose() * e.rotation_matrix())
            .sum();
        q = project_to_so3(&chordal);
        scale = ca.iter().zip(&cb).map(|(x, y)| (q * x).dot(y)).sum::<f64>() / (n * var_a);
    }
    if !(scale > 0.0) {
        return Err(GeometryError::DegenerateAlignment("non-positive scale"));
    }
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(q));
    let translation = mu_b - rotation * mu_a * scale;
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation,
    })
}
