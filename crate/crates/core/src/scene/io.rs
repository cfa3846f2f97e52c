//! JSON scene files.
//!
//! ```json
//! {
//!   "num_views": 2, "num_points": 2, "mode": "euclidean",
//!   "observations": [[0, 0, 310.5, 240.25], ...],
//!   "intrinsics": [[fx, 0, cx, 0, fy, cy, 0, 0, 1], ...],
//!   "gt_poses": [{"q": [w, x, y, z], "c": [x, y, z]}, ...],
//!   "gt_points": [[x, y, z], ...]
//! }
//! ```
//!
//! `intrinsics`, `gt_poses` and `gt_points` are optional. Observations are
//! `[view, point, x, y]`; floats are written in shortest round-trip form.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Observation, Scene, SceneError, SceneParts};
use crate::camera::{Mode, Pose};

#[derive(Serialize, Deserialize)]
struct PoseJson {
    q: [f64; 4],
    c: [f64; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneJson {
    num_views: usize,
    num_points: usize,
    mode: Mode,
    observations: Vec<(usize, usize, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    intrinsics: Option<Vec<[f64; 9]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_poses: Option<Vec<PoseJson>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_points: Option<Vec<[f64; 3]>>,
}

pub fn scene_from_json(text: &str) -> Result<Scene, SceneError> {
    let raw: SceneJson = serde_json::from_str(text)?;
    Scene::new(SceneParts {
        num_views: raw.num_views,
        num_points: raw.num_points,
        mode: raw.mode,
        observations: raw
            .observations
            .into_iter()
            .map(|(view, point, x, y)| Observation { view, point, x, y })
            .collect(),
        intrinsics: raw
            .intrinsics
            .map(|ks| ks.iter().map(|k| Matrix3::from_row_slice(k)).collect()),
        gt_poses: raw
            .gt_poses
            .map(|ps| ps.into_iter().map(|p| Pose::from_wxyz_unchecked(p.q, p.c)).collect()),
        gt_points: raw
            .gt_points
            .map(|xs| xs.into_iter().map(Vector3::from).collect()),
    })
}

pub fn scene_to_json(scene: &Scene) -> String {
    let raw = SceneJson {
        num_views: scene.num_views(),
        num_points: scene.num_points(),
        mode: scene.mode(),
        observations: scene
            .observations()
            .iter()
            .map(|o| (o.view, o.point, o.x, o.y))
            .collect(),
        intrinsics: scene.intrinsics().map(|ks| {
            ks.iter()
                .map(|k| {
                    let mut row_major = [0.0; 9];
                    for r in 0..3 {
                        for c in 0..3 {
                            row_major[r * 3 + c] = k[(r, c)];
                        }
                    }
                    row_major
                })
                .collect()
        }),
        gt_poses: scene.gt_poses().map(|ps| {
            ps.iter()
                .map(|p| PoseJson {
                    q: p.wxyz(),
                    c: [p.center.x, p.center.y, p.center.z],
                })
                .collect()
        }),
        gt_points: scene
            .gt_points()
            .map(|xs| xs.iter().map(|x| [x.x, x.y, x.z]).collect()),
    };
    serde_json::to_string_pretty(&raw).expect("scene serializes")
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    scene_from_json(&text)
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    std::fs::write(path, scene_to_json(scene)).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })
}
