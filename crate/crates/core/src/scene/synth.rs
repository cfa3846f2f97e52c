use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Observation, Scene, SceneError, SceneParts};
use crate::camera::{dehomogenize, Mode, Pose};

/// Views must observe at least this many points so outlier injection always
/// has room to work.
pub const GENERATOR_MIN_POINTS_PER_VIEW: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_views: usize,
    pub num_points: usize,
    /// Probability that a given point is visible in a given view.
    pub visibility: f64,
    /// Standard deviation of the measurement noise, in pixels when
    /// `with_intrinsics` is set and in normalized units otherwise.
    pub noise_sigma: f64,
    pub mode: Mode,
    /// Emit pixel measurements together with per-view intrinsics.
    pub with_intrinsics: bool,
    pub focal: f64,
    pub image_size: [f64; 2],
    /// Range of camera distances from the scene center.
    pub ring_radius: [f64; 2],
    /// Half-extent of the cube the points are drawn from.
    pub box_half_extent: f64,
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_views: 10,
            num_points: 100,
            visibility: 0.8,
            noise_sigma: 0.0,
            mode: Mode::Euclidean,
            with_intrinsics: false,
            focal: 600.0,
            image_size: [640.0, 480.0],
            ring_radius: [4.0, 6.0],
            box_half_extent: 1.0,
            max_attempts: 100,
        }
    }
}

/// Rotation whose third row (the principal axis) points from `center`
/// towards `target`.
fn look_at(center: &Vector3<f64>, target: &Vector3<f64>, roll: f64) -> UnitQuaternion<f64> {
    let z = (target - center).normalize();
    let up = if z.z.abs() > 0.99 { Vector3::x() } else { Vector3::z() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let base = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), roll) * base
}

fn sample_visibility(
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<bool>>> {
    let (m, n) = (cfg.num_views, cfg.num_points);
    let mut visible = vec![vec![false; n]; m];
    for j in 0..n {
        let mut tries = 0;
        loop {
            let mut count = 0;
            for row in visible.iter_mut() {
                row[j] = rng.gen_bool(cfg.visibility);
                count += usize::from(row[j]);
            }
            if count >= 2 {
                break;
            }
            tries += 1;
            if tries > 1000 {
                return None;
            }
        }
    }
    let enough = visible
        .iter()
        .all(|row| row.iter().filter(|&&v| v).count() >= GENERATOR_MIN_POINTS_PER_VIEW);
    enough.then_some(visible)
}

/// Cameras on a jittered ring around a point cloud, observing exact
/// projections (plus optional Gaussian noise).
///
/// Views are ordered by their angle on the ring, so contiguous index windows
/// correspond to neighbouring cameras. All points lie in front of all
/// cameras. Deterministic in `seed`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Scene, SceneError> {
    if cfg.num_views < 2 {
        return Err(SceneError::InvalidConfig("at least 2 views required".into()));
    }
    if cfg.num_points < GENERATOR_MIN_POINTS_PER_VIEW {
        return Err(SceneError::InvalidConfig(format!(
            "at least {GENERATOR_MIN_POINTS_PER_VIEW} points required"
        )));
    }
    if !(cfg.visibility > 0.0 && cfg.visibility <= 1.0) {
        return Err(SceneError::InvalidConfig("visibility must lie in (0, 1]".into()));
    }
    if !(cfg.noise_sigma >= 0.0) || !(cfg.box_half_extent > 0.0) {
        return Err(SceneError::InvalidConfig("noise and box extent must be non-negative".into()));
    }
    let [r_lo, r_hi] = cfg.ring_radius;
    if !(r_lo > 3f64.sqrt() * cfg.box_half_extent && r_hi >= r_lo) {
        return Err(SceneError::InvalidConfig(
            "ring radius must exceed the point-box half-diagonal".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (cfg.num_views, cfg.num_points);
    let h = cfg.box_half_extent;

    let points: Vec<Vector3<f64>> = (0..n)
        .map(|_| Vector3::new(rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)))
        .collect();
    let step = std::f64::consts::TAU / m as f64;
    let poses: Vec<Pose> = (0..m)
        .map(|i| {
            let angle = step * (i as f64 + rng.gen_range(-0.25..0.25));
            let radius = rng.gen_range(r_lo..=r_hi);
            let height = rng.gen_range(-0.5..0.5) * radius * 0.5;
            let center = Vector3::new(radius * angle.cos(), radius * angle.sin(), height);
            let target = Vector3::new(
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
                rng.gen_range(-0.2..0.2),
            ) * h;
            let roll = rng.gen_range(-0.2..0.2);
            Pose::new(look_at(&center, &target, roll), center)
        })
        .collect();

    let mut visible = None;
    for _ in 0..cfg.max_attempts.max(1) {
        if let Some(v) = sample_visibility(cfg, &mut rng) {
            visible = Some(v);
            break;
        }
    }
    let visible = visible.ok_or(SceneError::InfeasibleVisibility {
        attempts: cfg.max_attempts,
    })?;

    let k = Matrix3::new(
        cfg.focal,
        0.0,
        cfg.image_size[0] / 2.0,
        0.0,
        cfg.focal,
        cfg.image_size[1] / 2.0,
        0.0,
        0.0,
        1.0,
    );
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| SceneError::InvalidConfig(e.to_string()))?;
    let mut observations = Vec::new();
    for (i, pose) in poses.iter().enumerate() {
        for (j, x) in points.iter().enumerate() {
            if !visible[i][j] {
                continue;
            }
            let uv = dehomogenize(&pose.transform(x));
            let (mut u, mut v) = if cfg.with_intrinsics {
                let p = k * Vector3::new(uv.x, uv.y, 1.0);
                (p.x / p.z, p.y / p.z)
            } else {
                (uv.x, uv.y)
            };
            if cfg.noise_sigma > 0.0 {
                u += noise.sample(&mut rng);
                v += noise.sample(&mut rng);
            }
            observations.push(Observation { view: i, point: j, x: u, y: v });
        }
    }
    Scene::new(SceneParts {
        num_views: m,
        num_points: n,
        mode: cfg.mode,
        observations,
        intrinsics: cfg.with_intrinsics.then(|| vec![k; m]),
        gt_poses: Some(poses),
        gt_points: Some(points),
    })
}
