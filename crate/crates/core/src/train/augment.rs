use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AugConfig, TrainError};
use crate::camera::Mode;
use crate::objective::HINGE_DEPTH;
use crate::scene::Scene;

/// Draws per view before giving up on finding a rotation that keeps every
/// observed point in front of the camera.
pub const AUG_MAX_TRIES: usize = 100;

/// Per-view rotation applied about the camera center: first `alpha` about
/// the principal axis, then `gamma` about the in-plane axis
/// `(cos axis_angle, sin axis_angle, 0)`. Angles in degrees except
/// `axis_angle`, which is in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugRecord {
    pub alpha_deg: f64,
    pub gamma_deg: f64,
    pub axis_angle: f64,
}

impl AugRecord {
    pub fn identity() -> Self {
        Self {
            alpha_deg: 0.0,
            gamma_deg: 0.0,
            axis_angle: 0.0,
        }
    }

    /// Camera-frame rotation `R_axis(gamma) · R_z(alpha)`.
    pub fn rotation(&self) -> Matrix3<f64> {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), self.alpha_deg.to_radians());
        let axis = Unit::new_normalize(Vector3::new(self.axis_angle.cos(), self.axis_angle.sin(), 0.0));
        let ra = Rotation3::from_axis_angle(&axis, self.gamma_deg.to_radians());
        *(ra * rz).matrix()
    }
}

fn check_scene(scene: &Scene) -> Result<(), TrainError> {
    if scene.mode() != Mode::Euclidean {
        return Err(TrainError::Config("augmentation requires a euclidean scene".into()));
    }
    if scene.gt_poses().is_none() {
        return Err(TrainError::Config("augmentation requires ground-truth poses".into()));
    }
    Ok(())
}

/// Depth scale factors `(R_aug m)_3` of a view's observations; the new
/// depth is the old one times this factor.
fn depth_ratios(scene: &Scene, view: usize, r: &Matrix3<f64>) -> Vec<f64> {
    let obs = scene.observations();
    scene
        .pattern()
        .observations_in_view(view)
        .iter()
        .map(|&k| (r * Vector3::new(obs[k].x, obs[k].y, 1.0)).z)
        .collect()
}

fn keeps_points_in_front(scene: &Scene, view: usize, r: &Matrix3<f64>) -> bool {
    let ratios = depth_ratios(scene, view, r);
    match (scene.gt_points(), scene.gt_poses()) {
        (Some(points), Some(poses)) => {
            let pose = &poses[view];
            let obs = scene.observations();
            scene
                .pattern()
                .observations_in_view(view)
                .iter()
                .zip(&ratios)
                .all(|(&k, &ratio)| {
                    let depth = pose.transform(&points[obs[k].point]).z;
                    ratio > 0.0 && depth * ratio >= HINGE_DEPTH
                })
        }
        _ => ratios.iter().all(|&r| r > 0.0),
    }
}

/// Applies fixed per-view rotations to the cameras and the matching
/// homographies to the measurements. Points are unchanged.
pub fn augment_with(scene: &Scene, records: &[AugRecord]) -> Result<Scene, TrainError> {
    check_scene(scene)?;
    if records.len() != scene.num_views() {
        return Err(TrainError::Config(format!(
            "{} augmentation records for {} views",
            records.len(),
            scene.num_views()
        )));
    }
    let rotations: Vec<Matrix3<f64>> = records.iter().map(AugRecord::rotation).collect();
    for (view, r) in rotations.iter().enumerate() {
        if !keeps_points_in_front(scene, view, r) {
            return Err(TrainError::Augmentation { view });
        }
    }
    let coords: Vec<[f64; 2]> = scene
        .observations()
        .iter()
        .map(|o| {
            let z = rotations[o.view] * Vector3::new(o.x, o.y, 1.0);
            [z.x / z.z, z.y / z.z]
        })
        .collect();
    let poses = scene
        .gt_poses()
        .expect("checked above")
        .iter()
        .zip(&rotations)
        .map(|(pose, r)| {
            let aug = UnitQuaternion::from_matrix(r);
            crate::camera::Pose::new(aug * pose.rotation, pose.center)
        })
        .collect();
    Ok(scene.with_coordinates(&coords)?.with_gt_poses(poses)?)
}

/// Samples one rotation per view from the configured ranges, redrawing a
/// view whose rotation would push an observed point behind the camera.
pub fn augment<R: Rng>(
    scene: &Scene,
    cfg: &AugConfig,
    rng: &mut R,
) -> Result<(Scene, Vec<AugRecord>), TrainError> {
    check_scene(scene)?;
    let draw = |rng: &mut R, [lo, hi]: [f64; 2]| if lo < hi { rng.gen_range(lo..=hi) } else { lo };
    let mut records = Vec::with_capacity(scene.num_views());
    for view in 0..scene.num_views() {
        let mut found = None;
        for _ in 0..AUG_MAX_TRIES {
            let rec = AugRecord {
                alpha_deg: draw(rng, cfg.alpha_range_deg),
                gamma_deg: draw(rng, cfg.gamma_range_deg),
                axis_angle: rng.gen_range(0.0..std::f64::consts::TAU),
            };
            if keeps_points_in_front(scene, view, &rec.rotation()) {
                found = Some(rec);
                break;
            }
        }
        records.push(found.ok_or(TrainError::Augmentation { view })?);
    }
    let out = augment_with(scene, &records)?;
    Ok((out, records))
}
