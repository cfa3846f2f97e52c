use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Scene, SceneError};
use crate::camera::Mode;

/// Per-view transforms taking raw measurements to the normalized
/// coordinates the network and the objective work in:
/// `normalized ~ transform · (x, y, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    transforms: Vec<Matrix3<f64>>,
    inverses: Vec<Matrix3<f64>>,
}

impl NormalizationRecord {
    pub fn identity(num_views: usize) -> Self {
        Self {
            transforms: vec![Matrix3::identity(); num_views],
            inverses: vec![Matrix3::identity(); num_views],
        }
    }

    pub fn num_views(&self) -> usize {
        self.transforms.len()
    }

    pub fn transform(&self, view: usize) -> &Matrix3<f64> {
        &self.transforms[view]
    }

    pub fn inverse(&self, view: usize) -> &Matrix3<f64> {
        &self.inverses[view]
    }

    /// Maps a normalized point of `view` back to raw (pixel) coordinates.
    pub fn denormalize(&self, view: usize, x: f64, y: f64) -> [f64; 2] {
        apply(&self.inverses[view], x, y)
    }

    /// Keeps only the listed views, in order.
    pub fn select_views(&self, views: &[usize]) -> Self {
        Self {
            transforms: views.iter().map(|&v| self.transforms[v]).collect(),
            inverses: views.iter().map(|&v| self.inverses[v]).collect(),
        }
    }
}

fn apply(h: &Matrix3<f64>, x: f64, y: f64) -> [f64; 2] {
    let p = h * Vector3::new(x, y, 1.0);
    [p.x / p.z, p.y / p.z]
}

/// Replaces every measurement by `K⁻¹ (x, y, 1)`, dehomogenized.
///
/// The returned scene no longer carries intrinsics; they live in the record.
pub fn normalize_euclidean(scene: &Scene) -> Result<(Scene, NormalizationRecord), SceneError> {
    let ks = scene.intrinsics().ok_or(SceneError::MissingIntrinsics)?;
    let mut inverses = Vec::with_capacity(ks.len());
    for (view, k) in ks.iter().enumerate() {
        let inv = k
            .try_inverse()
            .filter(|inv| inv.iter().all(|v| v.is_finite()))
            .ok_or(SceneError::SingularIntrinsics { view })?;
        inverses.push(inv);
    }
    let coords: Vec<[f64; 2]> = scene
        .observations()
        .iter()
        .map(|o| apply(&inverses[o.view], o.x, o.y))
        .collect();
    let mut parts = scene.with_coordinates(&coords)?.to_parts();
    parts.intrinsics = None;
    let record = NormalizationRecord {
        transforms: inverses,
        inverses: ks.to_vec(),
    };
    Ok((Scene::new(parts)?, record))
}

/// Per-view similarity moving the view's points to zero centroid and mean
/// distance √2 from the origin.
pub fn normalize_hartley(scene: &Scene) -> Result<(Scene, NormalizationRecord), SceneError> {
    if scene.mode() != Mode::Projective {
        return Err(SceneError::ModeMismatch {
            expected: Mode::Projective,
            found: scene.mode(),
        });
    }
    let pattern = scene.pattern();
    let obs = scene.observations();
    let mut coords = vec![[0.0; 2]; obs.len()];
    let mut transforms = Vec::with_capacity(scene.num_views());
    let mut inverses = Vec::with_capacity(scene.num_views());
    for view in 0..scene.num_views() {
        let idx = pattern.observations_in_view(view);
        let count = idx.len() as f64;
        let cx = idx.iter().map(|&k| obs[k].x).sum::<f64>() / count;
        let cy = idx.iter().map(|&k| obs[k].y).sum::<f64>() / count;
        let mean_dist = idx
            .iter()
            .map(|&k| (obs[k].x - cx).hypot(obs[k].y - cy))
            .sum::<f64>()
            / count;
        if !(mean_dist > 0.0) || !mean_dist.is_finite() {
            return Err(SceneError::DegenerateView { view });
        }
        let s = std::f64::consts::SQRT_2 / mean_dist;
        for &k in idx {
            coords[k] = [s * (obs[k].x - cx), s * (obs[k].y - cy)];
        }
        transforms.push(Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0));
        inverses.push(Matrix3::new(1.0 / s, 0.0, cx, 0.0, 1.0 / s, cy, 0.0, 0.0, 1.0));
    }
    let normalized = scene.with_coordinates(&coords)?;
    Ok((normalized, NormalizationRecord { transforms, inverses }))
}

/// Euclidean scenes are normalized by their intrinsics (identity when none
/// are given, i.e. the measurements are already calibrated); projective
/// scenes by per-view Hartley normalization.
pub fn normalize_for_mode(scene: &Scene) -> Result<(Scene, NormalizationRecord), SceneError> {
    match scene.mode() {
        Mode::Euclidean if scene.intrinsics().is_some() => normalize_euclidean(scene),
        Mode::Euclidean => Ok((scene.clone(), NormalizationRecord::identity(scene.num_views()))),
        Mode::Projective => normalize_hartley(scene),
    }
}
