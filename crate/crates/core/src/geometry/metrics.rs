use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{align_similarity, GeometryError, SimilarityTransform};
use crate::camera::{Camera, Mode, Pose};
use crate::recon::Reconstruction;
use crate::scene::{NormalizationRecord, Scene};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean reprojection error in the raw measurement units (pixels when
    /// the scene came with intrinsics).
    pub reprojection_px: f64,
    /// Mean rotation error after alignment, in degrees. Euclidean only.
    pub rotation_deg: Option<f64>,
    /// Mean camera-center error after alignment, in ground-truth units.
    pub translation: Option<f64>,
    pub per_view_rotation_deg: Option<Vec<f64>>,
    pub per_view_translation: Option<Vec<f64>>,
    pub alignment: Option<SimilarityTransform>,
}

/// Angle of the rotation `q`, in radians, from the quaternion directly.
/// Insensitive to the sign of `q`.
pub fn rotation_angle(q: &nalgebra::UnitQuaternion<f64>) -> f64 {
    let q = q.quaternion();
    2.0 * q.imag().norm().atan2(q.w.abs())
}

/// Mean reprojection error of `recon` against the raw measurements, with
/// both the prediction and the measurement mapped back through `norm`.
pub fn reprojection_px(
    scene: &Scene,
    recon: &Reconstruction,
    norm: &NormalizationRecord,
) -> Result<f64, GeometryError> {
    check_dims(scene, recon)?;
    if norm.num_views() != scene.num_views() {
        return Err(GeometryError::DimMismatch {
            what: "normalization record",
            found: norm.num_views(),
            expected: scene.num_views(),
        });
    }
    let mut total = 0.0;
    for o in scene.observations() {
        let z = recon.cameras[o.view].transform(&recon.points[o.point]);
        if z.z == 0.0 {
            return Err(GeometryError::NonFinite("projection"));
        }
        let pred = norm.denormalize(o.view, z.x / z.z, z.y / z.z);
        let meas = norm.denormalize(o.view, o.x, o.y);
        total += (Vector2::from(pred) - Vector2::from(meas)).norm();
    }
    let mean = total / scene.num_observations() as f64;
    if !mean.is_finite() {
        return Err(GeometryError::NonFinite("reprojection"));
    }
    Ok(mean)
}

fn check_dims(scene: &Scene, recon: &Reconstruction) -> Result<(), GeometryError> {
    if recon.mode != scene.mode() {
        return Err(GeometryError::ModeMismatch);
    }
    if recon.num_views() != scene.num_views() || recon.num_points() != scene.num_points() {
        return Err(GeometryError::DimMismatch {
            what: "reconstruction",
            found: recon.num_views() + recon.num_points(),
            expected: scene.num_views() + scene.num_points(),
        });
    }
    Ok(())
}

/// Reprojection, rotation and translation errors. The pose errors need
/// ground-truth poses and a Euclidean reconstruction; they are measured
/// after aligning the estimated camera centers onto the ground truth.
pub fn metrics(
    scene: &Scene,
    recon: &Reconstruction,
    norm: &NormalizationRecord,
    gt: Option<&[Pose]>,
) -> Result<Metrics, GeometryError> {
    let reprojection_px = reprojection_px(scene, recon, norm)?;
    let mut out = Metrics {
        reprojection_px,
        rotation_deg: None,
        translation: None,
        per_view_rotation_deg: None,
        per_view_translation: None,
        alignment: None,
    };
    let (Some(gt), Mode::Euclidean) = (gt, recon.mode) else {
        return Ok(out);
    };
    let est: Vec<Pose> = recon
        .cameras
        .iter()
        .map(|c| match c {
            Camera::Euclidean(p) => *p,
            Camera::Projective(_) => unreachable!("mode checked"),
        })
        .collect();
    let sim = align_similarity(&est, gt)?;
    let inv = sim.rotation.inverse();
    let rot: Vec<f64> = est
        .iter()
        .zip(gt)
        .map(|(e, g)| rotation_angle(&(e.rotation * inv * g.rotation.inverse())).to_degrees())
        .collect();
    let trans: Vec<f64> = est
        .iter()
        .zip(gt)
        .map(|(e, g)| (sim.apply(&e.center) - g.center).norm())
        .collect();
    let m = rot.len() as f64;
    out.rotation_deg = Some(rot.iter().sum::<f64>() / m);
    out.translation = Some(trans.iter().sum::<f64>() / m);
    out.per_view_rotation_deg = Some(rot);
    out.per_view_translation = Some(trans);
    out.alignment = Some(sim);
    Ok(out)
}

/// Applies a similarity to a whole reconstruction (cameras and points).
pub fn transform_reconstruction(recon: &Reconstruction, sim: &SimilarityTransform) -> Reconstruction {
    let cameras = recon
        .cameras
        .iter()
        .map(|c| match c {
            Camera::Euclidean(p) => Camera::Euclidean(sim.apply_pose(p)),
            Camera::Projective(p) => {
                // P' = P · T⁻¹ with T the 4×4 similarity.
                let mut t_inv = nalgebra::Matrix4::identity();
                let r_inv = sim.rotation.inverse().to_rotation_matrix().into_inner() / sim.scale;
                t_inv.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_inv);
                t_inv.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-r_inv * sim.translation));
                Camera::Projective(p * t_inv)
            }
        })
        .collect();
    let points: Vec<Vector3<f64>> = recon.points.iter().map(|x| sim.apply(x)).collect();
    Reconstruction {
        mode: recon.mode,
        cameras,
        points,
    }
}
