//! Projection model, the training loss and gradient normalization.
//!
//! The loss averages, over all observations, the non-squared reprojection
//! error `‖m_ij − Π(z_ij)‖`. Projections with depth below [`HINGE_DEPTH`]
//! contribute `−depth` instead, which pushes points in front of their
//! cameras and keeps the loss away from the singular principal plane.

use std::sync::Arc;

use nalgebra::{Vector2, Vector3};

use crate::camera::{dehomogenize, Camera, Mode};
use crate::diff::{DiffError, Tape, Tensor, Var};
use crate::recon::Reconstruction;
use crate::scene::Scene;

/// Depth threshold `h`; projections strictly shallower use the hinge.
pub const HINGE_DEPTH: f64 = 1e-4;

/// Added under the square root of each residual norm so the gradient stays
/// finite at exact zero.
pub const RESIDUAL_EPS: f64 = 1e-24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("projection depth is exactly zero")]
    SingularProjection,
    #[error("{what}: got {found}, expected {expected}")]
    DimMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("reconstruction is {found}, scene is {expected}")]
    ModeMismatch { expected: Mode, found: Mode },
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}

/// Image point and depth of `point` seen by `camera`.
pub fn project(camera: &Camera, point: &Vector3<f64>) -> Result<(Vector2<f64>, f64), ObjectiveError> {
    let z = camera.transform(point);
    if z.z == 0.0 {
        return Err(ObjectiveError::SingularProjection);
    }
    Ok((dehomogenize(&z), z.z))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// The loss value: mean over observations, in normalized units.
    pub mean_reprojection: f64,
    /// Observations on the depth-hinge branch.
    pub hinge_count: usize,
    /// Per-observation terms, in observation order.
    pub per_observation: Option<Vec<f64>>,
}

/// The loss on a tape.
pub struct LossOutput {
    pub loss: Var,
    /// `[N, 1]` per-observation terms.
    pub terms: Var,
    /// Which observations took the hinge branch.
    pub hinge: Arc<[bool]>,
}

fn col(tape: &mut Tape, x: Var, k: usize) -> Var {
    tape.slice_cols(x, k, k + 1).expect("column in range")
}

/// `2 (a b + sign · c d)`.
fn twice(tape: &mut Tape, a: Var, b: Var, c: Var, d: Var, sign: f64) -> Var {
    let ab = tape.mul(a, b).expect("same shape");
    let cd = tape.mul(c, d).expect("same shape");
    let cd = tape.scale(cd, sign);
    let s = tape.add(ab, cd).expect("same shape");
    tape.scale(s, 2.0)
}

/// `1 − 2 (a² + b²)` from precomputed squares.
fn diag(tape: &mut Tape, aa: Var, bb: Var) -> Var {
    let s = tape.add(aa, bb).expect("same shape");
    let s = tape.scale(s, -2.0);
    tape.offset(s, 1.0)
}

fn dot3(tape: &mut Tape, r: [Var; 3], d: [Var; 3]) -> Var {
    let a = tape.mul(r[0], d[0]).expect("same shape");
    let b = tape.mul(r[1], d[1]).expect("same shape");
    let c = tape.mul(r[2], d[2]).expect("same shape");
    let ab = tape.add(a, b).expect("same shape");
    tape.add(ab, c).expect("same shape")
}

/// Camera-frame coordinates `[z0, z1, z2]` (each `[N, 1]`) of every
/// observation.
fn camera_coords(
    tape: &mut Tape,
    mode: Mode,
    cams: Var,
    pts: Var,
) -> Result<[Var; 3], ObjectiveError> {
    let xs = [col(tape, pts, 0), col(tape, pts, 1), col(tape, pts, 2)];
    match mode {
        Mode::Euclidean => {
            let c = tape.slice_cols(cams, 0, 3)?;
            let d = tape.sub(pts, c)?;
            let d = [col(tape, d, 0), col(tape, d, 1), col(tape, d, 2)];
            let [w, x, y, z] = [3, 4, 5, 6].map(|k| col(tape, cams, k));
            let xx = tape.square(x);
            let yy = tape.square(y);
            let zz = tape.square(z);
            let rows = [
                [
                    diag(tape, yy, zz),
                    twice(tape, x, y, w, z, -1.0),
                    twice(tape, x, z, w, y, 1.0),
                ],
                [
                    twice(tape, x, y, w, z, 1.0),
                    diag(tape, xx, zz),
                    twice(tape, y, z, w, x, -1.0),
                ],
                [
                    twice(tape, x, z, w, y, -1.0),
                    twice(tape, y, z, w, x, 1.0),
                    diag(tape, xx, yy),
                ],
            ];
            Ok(rows.map(|r| dot3(tape, r, d)))
        }
        Mode::Projective => {
            let mut out = Vec::with_capacity(3);
            for r in 0..3 {
                let p = [0, 1, 2].map(|c| col(tape, cams, 4 * r + c));
                let lin = dot3(tape, p, xs);
                let t = col(tape, cams, 4 * r + 3);
                out.push(tape.add(lin, t)?);
            }
            Ok([out[0], out[1], out[2]])
        }
    }
}

/// Builds the loss of head outputs `cameras` (`[m, 7]` or `[m, 12]`) and
/// `points` (`[n, 3]`) against the measurements of `targets`.
pub fn loss_tape(
    tape: &mut Tape,
    mode: Mode,
    cameras: Var,
    points: Var,
    targets: &Scene,
) -> Result<LossOutput, ObjectiveError> {
    let width = match mode {
        Mode::Euclidean => 7,
        Mode::Projective => 12,
    };
    let (tc, tp) = (tape.value(cameras), tape.value(points));
    for (what, found, expected) in [
        ("camera rows", tc.rows(), targets.num_views()),
        ("camera width", tc.cols(), width),
        ("point rows", tp.rows(), targets.num_points()),
        ("point width", tp.cols(), 3),
    ] {
        if found != expected {
            return Err(ObjectiveError::DimMismatch { what, found, expected });
        }
    }
    let pattern = targets.pattern();
    let cams = tape.gather_rows(cameras, pattern.view_index().into())?;
    let pts = tape.gather_rows(points, pattern.point_index().into())?;
    let [z0, z1, z2] = camera_coords(tape, mode, cams, pts)?;

    let n_obs = targets.num_observations();
    let hinge: Arc<[bool]> = tape
        .value(z2)
        .data()
        .iter()
        .map(|&d| !(d >= HINGE_DEPTH))
        .collect();
    let ones = tape.constant(Tensor::filled(n_obs, 1, 1.0));
    let safe = tape.select(hinge.clone(), ones, z2)?;
    let u = tape.div(z0, safe)?;
    let v = tape.div(z1, safe)?;
    let obs = targets.observations();
    let mx = tape.constant(Tensor::new(vec![n_obs, 1], obs.iter().map(|o| o.x).collect())?);
    let my = tape.constant(Tensor::new(vec![n_obs, 1], obs.iter().map(|o| o.y).collect())?);
    let du = tape.sub(u, mx)?;
    let dv = tape.sub(v, my)?;
    let du2 = tape.square(du);
    let dv2 = tape.square(dv);
    let ss = tape.add(du2, dv2)?;
    let ss = tape.offset(ss, RESIDUAL_EPS);
    let reproj = tape.sqrt(ss);
    let neg_depth = tape.neg(z2);
    let terms = tape.select(hinge.clone(), neg_depth, reproj)?;
    let loss = tape.mean(terms);
    Ok(LossOutput { loss, terms, hinge })
}

/// Head-output encoding of a reconstruction: rows `(c, q_wxyz)` or the 12
/// row-major matrix entries, and the points.
pub fn recon_tensors(recon: &Reconstruction) -> (Tensor, Tensor) {
    let cams: Vec<Vec<f64>> = recon
        .cameras
        .iter()
        .map(|cam| match cam {
            Camera::Euclidean(pose) => {
                let mut row = pose.center.as_slice().to_vec();
                row.extend_from_slice(&pose.wxyz());
                row
            }
            Camera::Projective(p) => {
                let mut row = Vec::with_capacity(12);
                for r in 0..3 {
                    for c in 0..4 {
                        row.push(p[(r, c)]);
                    }
                }
                row
            }
        })
        .collect();
    let pts: Vec<Vec<f64>> = recon.points.iter().map(|x| x.as_slice().to_vec()).collect();
    let width = match recon.mode {
        Mode::Euclidean => 7,
        Mode::Projective => 12,
    };
    let cams = if cams.is_empty() {
        Tensor::zeros(0, width)
    } else {
        Tensor::from_rows(&cams).expect("equal rows")
    };
    let pts = if pts.is_empty() {
        Tensor::zeros(0, 3)
    } else {
        Tensor::from_rows(&pts).expect("equal rows")
    };
    (cams, pts)
}

/// Loss of `recon` against the measurements of `scene`.
pub fn evaluate_loss(scene: &Scene, recon: &Reconstruction) -> Result<LossReport, ObjectiveError> {
    if recon.mode != scene.mode() {
        return Err(ObjectiveError::ModeMismatch {
            expected: scene.mode(),
            found: recon.mode,
        });
    }
    let (cams, pts) = recon_tensors(recon);
    let mut tape = Tape::new();
    let c = tape.constant(cams);
    let p = tape.constant(pts);
    let out = loss_tape(&mut tape, recon.mode, c, p, scene)?;
    let report = LossReport {
        mean_reprojection: tape.value(out.loss).data()[0],
        hinge_count: out.hinge.iter().filter(|&&h| h).count(),
        per_observation: Some(tape.value(out.terms).data().to_vec()),
    };
    if !report.mean_reprojection.is_finite() {
        return Err(ObjectiveError::NonFinite("loss"));
    }
    Ok(report)
}

/// Scales the concatenation of all gradient buffers to unit L2 norm and
/// returns the norm before scaling. An all-zero gradient is left unchanged.
pub fn normalize_gradients(grads: &mut [Vec<f64>]) -> Result<f64, ObjectiveError> {
    let mut sum = 0.0;
    for g in grads.iter() {
        for v in g {
            if !v.is_finite() {
                return Err(ObjectiveError::NonFinite("gradient"));
            }
            sum += v * v;
        }
    }
    let norm = sum.sqrt();
    if !norm.is_finite() {
        return Err(ObjectiveError::NonFinite("gradient norm"));
    }
    if norm > 0.0 {
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v /= norm);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::diff::{grad_check, CoordinateStatus, GradCheckOptions};
    use crate::scene::{generate_synthetic, Observation, SceneParts, SynthConfig};
    use nalgebra::{Matrix3x4, UnitQuaternion, Vector4};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(
            UnitQuaternion::from_euler_angles(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
            ),
            Vector3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
        )
    }

    #[test]
    fn identity_pose_projection() {
        let cam = Camera::Euclidean(Pose::identity());
        let (uv, d) = project(&cam, &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!((uv, d), (Vector2::zeros(), 2.0));
        let (uv, _) = project(&cam, &Vector3::new(2.0, 4.0, 2.0)).unwrap();
        assert_eq!(uv, Vector2::new(1.0, 2.0));
        assert_eq!(
            project(&cam, &Vector3::new(1.0, 1.0, 0.0)),
            Err(ObjectiveError::SingularProjection)
        );
    }

    #[test]
    fn projection_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let x = Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let z = pose.matrix() * Vector4::new(x.x, x.y, x.z, 1.0);
            if z.z.abs() < 0.1 {
                continue;
            }
            for cam in [Camera::Euclidean(pose), Camera::Projective(pose.matrix())] {
                let (uv, d) = project(&cam, &x).unwrap();
                assert!((d - z.z).abs() < 1e-12);
                assert!((uv - Vector2::new(z.x / z.z, z.y / z.z)).norm() < 1e-12 * (1.0 + uv.norm()));
            }
        }
    }

    fn gt(scene: &Scene) -> Reconstruction {
        Reconstruction::from_ground_truth(scene).unwrap()
    }

    #[test]
    fn ground_truth_has_zero_loss() {
        for mode in [Mode::Euclidean, Mode::Projective] {
            let cfg = SynthConfig { mode, ..SynthConfig::default() };
            let scene = generate_synthetic(&cfg, 3).unwrap();
            let report = evaluate_loss(&scene, &gt(&scene)).unwrap();
            assert!(report.mean_reprojection < 1e-10, "{mode}: {}", report.mean_reprojection);
            assert_eq!(report.hinge_count, 0);
        }
    }

    /// Two identity-rotation cameras and a handful of points, with point 0
    /// placed by the caller. View 0 measurements are exact.
    fn two_view_scene(first_point: Vector3<f64>) -> (Scene, Reconstruction) {
        let cams = vec![
            Camera::Euclidean(Pose::identity()),
            Camera::Euclidean(Pose::new(UnitQuaternion::identity(), Vector3::new(1.0, 0.0, -1.0))),
        ];
        let mut points = vec![first_point];
        points.extend((1..4).map(|j| Vector3::new(0.1 * j as f64, -0.2, 3.0)));
        let mut observations = Vec::new();
        for (i, cam) in cams.iter().enumerate() {
            for (j, x) in points.iter().enumerate() {
                let z = cam.transform(x);
                let (px, py) = if z.z > 0.0 { (z.x / z.z, z.y / z.z) } else { (0.0, 0.0) };
                // View 1 is slightly off so its residuals stay away from the
                // kink of the norm at zero.
                let px = px + 0.01 * i as f64;
                observations.push(Observation { view: i, point: j, x: px, y: py });
            }
        }
        let scene = Scene::new(SceneParts {
            num_views: 2,
            num_points: points.len(),
            mode: Mode::Euclidean,
            observations,
            intrinsics: None,
            gt_poses: None,
            gt_points: None,
        })
        .unwrap();
        let recon = Reconstruction {
            mode: Mode::Euclidean,
            cameras: cams,
            points,
        };
        (scene, recon)
    }

    #[test]
    fn point_behind_camera_contributes_its_depth() {
        let (scene, recon) = two_view_scene(Vector3::new(0.0, 0.0, -0.5));
        let report = evaluate_loss(&scene, &recon).unwrap();
        let terms = report.per_observation.unwrap();
        // View 0 sees it at depth −0.5, view 1 at depth 0.5 (reprojection 0).
        assert_eq!(terms[0], 0.5);
        assert_eq!(report.hinge_count, 1);
    }

    #[test]
    fn depth_exactly_at_threshold_uses_reprojection() {
        let (scene, recon) = two_view_scene(Vector3::new(0.0, 0.0, HINGE_DEPTH));
        let report = evaluate_loss(&scene, &recon).unwrap();
        assert_eq!(report.hinge_count, 0);
        assert!(report.per_observation.unwrap()[0] < 1e-11);
    }

    fn rigidly_moved(recon: &Reconstruction, rot: UnitQuaternion<f64>, t: Vector3<f64>) -> Reconstruction {
        Reconstruction {
            mode: recon.mode,
            cameras: recon
                .cameras
                .iter()
                .map(|c| {
                    let p = c.pose().unwrap();
                    Camera::Euclidean(Pose::new(p.rotation * rot.inverse(), rot * p.center + t))
                })
                .collect(),
            points: recon.points.iter().map(|x| rot * x + t).collect(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn loss_is_rigid_invariant(seed in 0u64..1000, noise in 0.0f64..0.05) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = SynthConfig { num_views: 5, num_points: 30, ..SynthConfig::default() };
            let scene = generate_synthetic(&cfg, seed).unwrap();
            let mut recon = gt(&scene);
            for x in recon.points.iter_mut() {
                *x += Vector3::new(rng.gen_range(-noise..=noise), rng.gen_range(-noise..=noise), 0.0);
            }
            let moved = rigidly_moved(&recon, random_pose(&mut rng).rotation, Vector3::new(1.0, -2.0, 0.5));
            let a = evaluate_loss(&scene, &recon).unwrap().mean_reprojection;
            let b = evaluate_loss(&scene, &moved).unwrap().mean_reprojection;
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    fn loss_value(scene: &Scene, mode: Mode, cams: &Tensor, pts: &Tensor) -> f64 {
        let mut tape = Tape::new();
        let c = tape.constant(cams.clone());
        let p = tape.constant(pts.clone());
        let out = loss_tape(&mut tape, mode, c, p, scene).unwrap();
        tape.value(out.loss).data()[0]
    }

    fn check_gradient(scene: &Scene, recon: &Reconstruction, opts: &GradCheckOptions) -> crate::diff::GradCheckReport {
        let (cams, pts) = recon_tensors(recon);
        let mut tape = Tape::new();
        let c = tape.param(cams.clone());
        let p = tape.param(pts.clone());
        let out = loss_tape(&mut tape, recon.mode, c, p, scene).unwrap();
        tape.backward(out.loss).unwrap();
        let mut analytic = tape.grad_or_zeros(c);
        analytic.extend(tape.grad_or_zeros(p));
        let mut theta = cams.data().to_vec();
        theta.extend_from_slice(pts.data());
        let split = cams.len();
        let shape_c = cams.shape().to_vec();
        let shape_p = pts.shape().to_vec();
        grad_check::<_, DiffError>(
            |th| {
                let c = Tensor::new(shape_c.clone(), th[..split].to_vec())?;
                let p = Tensor::new(shape_p.clone(), th[split..].to_vec())?;
                Ok(loss_value(scene, recon.mode, &c, &p))
            },
            &theta,
            &analytic,
            opts,
        )
        .unwrap()
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for mode in [Mode::Euclidean, Mode::Projective] {
            let cfg = SynthConfig { num_views: 3, num_points: 10, mode, ..SynthConfig::default() };
            let scene = generate_synthetic(&cfg, 6).unwrap();
            let mut recon = gt(&scene);
            for x in recon.points.iter_mut() {
                *x += Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            }
            let opts = GradCheckOptions { tol: 1e-4, ..GradCheckOptions::default() };
            let report = check_gradient(&scene, &recon, &opts);
            assert!(report.passed(), "{mode}: {:?}", report.mismatches());
            assert!(report.branch_points().is_empty());
        }
    }

    #[test]
    fn hinge_switch_is_reported() {
        // Point 0 sits on the principal axis of view 0, just above the
        // threshold and closer to it than the finite-difference step.
        let (scene, recon) = two_view_scene(Vector3::new(0.0, 0.0, HINGE_DEPTH + 2e-6));
        let opts = GradCheckOptions { tol: 1e-4, ..GradCheckOptions::default() };
        let report = check_gradient(&scene, &recon, &opts);
        // Coordinate z of point 0 follows the camera block (2 × 7 values).
        let z_index = 14 + 2;
        let entry = report.entries.iter().find(|e| e.index == z_index).unwrap();
        assert_eq!(entry.status, CoordinateStatus::Branch, "{entry:?}");
        assert!(report.branch_points().contains(&z_index));
        // The center of view 0 moves the same depth across the threshold.
        let c_z = report.entries.iter().find(|e| e.index == 2).unwrap();
        assert_ne!(c_z.status, CoordinateStatus::Match);
    }

    #[test]
    fn gradient_normalization() {
        let mut g = vec![vec![6.0, 0.0], vec![8.0]];
        let norm = normalize_gradients(&mut g).unwrap();
        assert_eq!(norm, 10.0);
        let flat: Vec<f64> = g.concat();
        assert!((flat.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-12);
        assert!((flat[0] - 0.6).abs() < 1e-12 && (flat[2] - 0.8).abs() < 1e-12);

        let mut zero = vec![vec![0.0; 3]];
        assert_eq!(normalize_gradients(&mut zero).unwrap(), 0.0);
        assert_eq!(zero, vec![vec![0.0; 3]]);

        let mut bad = vec![vec![1.0, f64::NAN]];
        assert!(normalize_gradients(&mut bad).is_err());
    }

    proptest! {
        #[test]
        fn normalization_preserves_direction(g in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            prop_assume!(g.iter().any(|&v| v != 0.0));
            let mut scaled = vec![g.clone()];
            let norm = normalize_gradients(&mut scaled).unwrap();
            let s = &scaled[0];
            let total: f64 = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            // A descent step along either gradient moves in the same direction.
            for (a, b) in g.iter().zip(s) {
                prop_assert!((a / norm - b).abs() <= 1e-12);
                prop_assert_eq!(a.signum() * (a.abs() > 0.0) as i32 as f64, b.signum() * (b.abs() > 0.0) as i32 as f64);
            }
        }
    }

    #[test]
    fn mismatched_reconstruction_is_rejected() {
        let scene = generate_synthetic(&SynthConfig::default(), 1).unwrap();
        let mut recon = gt(&scene);
        recon.points.pop();
        assert!(matches!(evaluate_loss(&scene, &recon), Err(ObjectiveError::DimMismatch { .. })));
        let proj = Reconstruction {
            mode: Mode::Projective,
            cameras: vec![Camera::Projective(Matrix3x4::identity()); scene.num_views()],
            points: gt(&scene).points,
        };
        assert!(matches!(evaluate_loss(&scene, &proj), Err(ObjectiveError::ModeMismatch { .. })));
    }
}
