//! Reconstructions: one camera per view and one 3D point per scene point.
//!
//! Cameras are stored as JSON, points additionally as binary PLY:
//!
//! ```json
//! {
//!   "mode": "euclidean",
//!   "cameras": [{"q": [w, x, y, z], "c": [x, y, z]}, ...],
//!   "points": [[x, y, z], ...]
//! }
//! ```
//!
//! Projective cameras are written as `{"p": [12 row-major entries]}`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Camera, Mode, Pose};

#[derive(Debug, thiserror::Error)]
pub enum ReconError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed reconstruction JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("camera {index} does not match the {mode} mode")]
    ModeMismatch { index: usize, mode: Mode },
    #[error("camera {index}: quaternion is not unit length")]
    NonUnitQuaternion { index: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub mode: Mode,
    pub cameras: Vec<Camera>,
    pub points: Vec<Vector3<f64>>,
}

impl Reconstruction {
    pub fn num_views(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Ground-truth reconstruction of a scene with `gt_poses` and
    /// `gt_points`.
    pub fn from_ground_truth(scene: &crate::scene::Scene) -> Option<Self> {
        let poses = scene.gt_poses()?;
        let points = scene.gt_points()?;
        let cameras = match scene.mode() {
            Mode::Euclidean => poses.iter().map(|p| Camera::Euclidean(*p)).collect(),
            Mode::Projective => poses
                .iter()
                .map(|p| Camera::Projective(crate::camera::normalize_projective(&p.matrix())))
                .collect(),
        };
        Some(Self {
            mode: scene.mode(),
            cameras,
            points: points.to_vec(),
        })
    }

    pub fn is_finite(&self) -> bool {
        let cams = self.cameras.iter().all(|c| c.matrix().iter().all(|v| v.is_finite()));
        cams && self.points.iter().all(|x| x.iter().all(|v| v.is_finite()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CameraJson {
    Pose { q: [f64; 4], c: [f64; 3] },
    Matrix { p: [f64; 12] },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReconJson {
    mode: Mode,
    cameras: Vec<CameraJson>,
    points: Vec<[f64; 3]>,
}

pub fn recon_to_json(recon: &Reconstruction) -> String {
    let cameras = recon
        .cameras
        .iter()
        .map(|cam| match cam {
            Camera::Euclidean(pose) => CameraJson::Pose {
                q: pose.wxyz(),
                c: pose.center.into(),
            },
            Camera::Projective(p) => {
                let mut row_major = [0.0; 12];
                for r in 0..3 {
                    for c in 0..4 {
                        row_major[r * 4 + c] = p[(r, c)];
                    }
                }
                CameraJson::Matrix { p: row_major }
            }
        })
        .collect();
    let raw = ReconJson {
        mode: recon.mode,
        cameras,
        points: recon.points.iter().map(|x| (*x).into()).collect(),
    };
    serde_json::to_string_pretty(&raw).expect("reconstruction serializes")
}

pub fn recon_from_json(text: &str) -> Result<Reconstruction, ReconError> {
    let raw: ReconJson = serde_json::from_str(text)?;
    let mut cameras = Vec::with_capacity(raw.cameras.len());
    for (index, cam) in raw.cameras.into_iter().enumerate() {
        let cam = match (raw.mode, cam) {
            (Mode::Euclidean, CameraJson::Pose { q, c }) => {
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !((norm - 1.0).abs() <= 1e-9) {
                    return Err(ReconError::NonUnitQuaternion { index });
                }
                Camera::Euclidean(Pose::from_wxyz_unchecked(q, c))
            }
            (Mode::Projective, CameraJson::Matrix { p }) => {
                Camera::Projective(Matrix3x4::from_row_slice(&p))
            }
            (mode, _) => return Err(ReconError::ModeMismatch { index, mode }),
        };
        cameras.push(cam);
    }
    let recon = Reconstruction {
        mode: raw.mode,
        cameras,
        points: raw.points.into_iter().map(Vector3::from).collect(),
    };
    if !recon.is_finite() {
        return Err(ReconError::NonFinite("reconstruction"));
    }
    Ok(recon)
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> ReconError + '_ {
    move |source| ReconError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn load_recon(path: impl AsRef<Path>) -> Result<Reconstruction, ReconError> {
    let path = path.as_ref();
    recon_from_json(&std::fs::read_to_string(path).map_err(io_error(path))?)
}

pub fn save_recon(recon: &Reconstruction, path: impl AsRef<Path>) -> Result<(), ReconError> {
    let path = path.as_ref();
    std::fs::write(path, recon_to_json(recon)).map_err(io_error(path))
}

/// Binary little-endian PLY with one `double x, y, z` vertex per point.
pub fn points_to_ply(points: &[Vector3<f64>]) -> Vec<u8> {
    let mut out = Vec::with_capacity(128 + points.len() * 24);
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property double x\nproperty double y\nproperty double z\nend_header\n",
        points.len()
    )
    .expect("write to vec");
    for x in points {
        for v in x.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_ply(points: &[Vector3<f64>], path: impl AsRef<Path>) -> Result<(), ReconError> {
    let path = path.as_ref();
    std::fs::write(path, points_to_ply(points)).map_err(io_error(path))
}
