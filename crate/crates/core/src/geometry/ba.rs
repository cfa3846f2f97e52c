use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{triangulate, GeometryError};
use crate::camera::{normalize_projective, Camera, Mode, Pose};
use crate::recon::Reconstruction;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RobustLoss {
    /// Quadratic up to the threshold, linear beyond.
    Huber(f64),
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinearSolver {
    /// Eliminate the 3×3 point blocks and solve the reduced camera system.
    Schur,
    /// Factor the full normal equations; meant for small problems and as a
    /// reference for the Schur path.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaConfig {
    pub loss: RobustLoss,
    pub max_iters_per_round: usize,
    /// Rounds of LM; points are re-triangulated between rounds.
    pub rounds: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub lambda_max: f64,
    /// Stop when an accepted step lowers the objective by less than this
    /// fraction.
    pub rel_tol: f64,
    /// Stop when the gradient's largest entry drops below this.
    pub grad_tol: f64,
    /// Stop when a rejected step is this small relative to the parameters.
    pub step_tol: f64,
    pub solver: LinearSolver,
}

impl Default for BaConfig {
    fn default() -> Self {
        Self {
            loss: RobustLoss::Huber(0.1),
            max_iters_per_round: 100,
            rounds: 2,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 10.0,
            lambda_max: 1e16,
            rel_tol: 1e-12,
            grad_tol: 1e-12,
            step_tol: 1e-14,
            solver: LinearSolver::Schur,
        }
    }
}

impl BaConfig {
    pub fn validate(&self) -> Result<(), GeometryError> {
        let positive = [
            self.lambda_init,
            self.lambda_max,
            self.rel_tol,
            self.grad_tol,
            self.step_tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || !(self.lambda_up > 1.0) || !(self.lambda_down > 1.0) {
            return Err(GeometryError::Config("damping and tolerances must be positive".into()));
        }
        if let RobustLoss::Huber(t) = self.loss {
            if !(t > 0.0) {
                return Err(GeometryError::Config("huber threshold must be positive".into()));
            }
        }
        if self.rounds == 0 {
            return Err(GeometryError::Config("at least one round required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    GradientTolerance,
    RelativeDecrease,
    StepTolerance,
    IterationLimit,
    /// Damping exceeded `lambda_max` without an acceptable step.
    DampingExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// Objective at the start and after every accepted step.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Points replaced by re-triangulation before this round.
    pub retriangulated: usize,
    pub mean_reprojection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub rounds: Vec<RoundReport>,
}

impl BaReport {
    /// False if any round ended without an acceptable step at maximal
    /// damping.
    pub fn converged(&self) -> bool {
        self.rounds
            .iter()
            .all(|r| r.termination != Termination::DampingExhausted)
    }

    pub fn final_objective(&self) -> f64 {
        self.rounds
            .last()
            .and_then(|r| r.objective_history.last().copied())
            .unwrap_or(f64::NAN)
    }

    pub fn final_mean_reprojection(&self) -> f64 {
        self.rounds.last().map_or(f64::NAN, |r| r.mean_reprojection)
    }
}

fn camera_dof(mode: Mode) -> usize {
    match mode {
        Mode::Euclidean => 6,
        Mode::Projective => 12,
    }
}

/// `ρ(s)` and `ρ'(s)` of the squared residual norm `s`.
fn robust(loss: RobustLoss, s: f64) -> (f64, f64) {
    match loss {
        RobustLoss::Squared => (s, 1.0),
        RobustLoss::Huber(t) => {
            if s <= t * t {
                (s, 1.0)
            } else {
                let r = s.sqrt();
                (2.0 * t * r - t * t, t / r)
            }
        }
    }
}

fn residual(cam: &Camera, x: &Vector3<f64>, m: Vector2<f64>) -> Option<(Vector2<f64>, Vector3<f64>)> {
    let z = cam.transform(x);
    if z.z == 0.0 || !z.iter().all(|v| v.is_finite()) {
        return None;
    }
    Some((Vector2::new(z.x / z.z, z.y / z.z) - m, z))
}

/// Robust objective `Σ ρ(‖r‖²)`; infinite if a projection is undefined.
pub fn ba_objective(scene: &Scene, cameras: &[Camera], points: &[Vector3<f64>], loss: RobustLoss) -> f64 {
    let mut total = 0.0;
    for o in scene.observations() {
        match residual(&cameras[o.view], &points[o.point], Vector2::new(o.x, o.y)) {
            Some((r, _)) => total += robust(loss, r.norm_squared()).0,
            None => return f64::INFINITY,
        }
    }
    total
}

/// Mean Euclidean reprojection error, in the units of the measurements.
pub fn mean_reprojection(scene: &Scene, cameras: &[Camera], points: &[Vector3<f64>]) -> f64 {
    let n = scene.num_observations() as f64;
    scene
        .observations()
        .iter()
        .map(|o| match residual(&cameras[o.view], &points[o.point], Vector2::new(o.x, o.y)) {
            Some((r, _)) => r.norm(),
            None => f64::INFINITY,
        })
        .sum::<f64>()
        / n
}

/// Jacobians of the residual of one observation with respect to the local
/// camera increment and the point.
pub(crate) fn jacobians(cam: &Camera, x: &Vector3<f64>, z: &Vector3<f64>) -> (DMatrix<f64>, Matrix2x3<f64>) {
    let iz = 1.0 / z.z;
    let dpi = Matrix2x3::new(iz, 0.0, -z.x * iz * iz, 0.0, iz, -z.y * iz * iz);
    match cam {
        Camera::Euclidean(pose) => {
            let r = pose.rotation_matrix();
            let dz_dtheta = -z.cross_matrix();
            let mut jc = DMatrix::zeros(2, 6);
            jc.view_mut((0, 0), (2, 3)).copy_from(&(dpi * dz_dtheta));
            jc.view_mut((0, 3), (2, 3)).copy_from(&(-(dpi * r)));
            (jc, dpi * r)
        }
        Camera::Projective(p) => {
            let xh = [x.x, x.y, x.z, 1.0];
            let mut jc = DMatrix::zeros(2, 12);
            for row in 0..2 {
                for r in 0..3 {
                    for c in 0..4 {
                        jc[(row, 4 * r + c)] = dpi[(row, r)] * xh[c];
                    }
                }
            }
            let p3: Matrix3<f64> = p.fixed_view::<3, 3>(0, 0).into_owned();
            (jc, dpi * p3)
        }
    }
}

/// Applies a local increment to a camera.
pub(crate) fn retract(cam: &Camera, d: &[f64]) -> Camera {
    match cam {
        Camera::Euclidean(pose) => {
            let dq = UnitQuaternion::from_scaled_axis(Vector3::new(d[0], d[1], d[2]));
            Camera::Euclidean(Pose::new(
                dq * pose.rotation,
                pose.center + Vector3::new(d[3], d[4], d[5]),
            ))
        }
        Camera::Projective(p) => {
            let mut q = *p;
            for r in 0..3 {
                for c in 0..4 {
                    q[(r, c)] += d[4 * r + c];
                }
            }
            Camera::Projective(normalize_projective(&q))
        }
    }
}

/// Weighted Gauss–Newton system in block form.
struct Normal {
    dof: usize,
    /// Camera diagonal blocks `U_i`.
    u: Vec<DMatrix<f64>>,
    /// Point blocks `V_j`.
    v: Vec<Matrix3<f64>>,
    /// Camera–point coupling `W_k` per observation.
    w: Vec<DMatrix<f64>>,
    g_cam: Vec<DVector<f64>>,
    g_pt: Vec<Vector3<f64>>,
}

impl Normal {
    fn grad_inf_norm(&self) -> f64 {
        let a = self.g_cam.iter().map(|g| g.amax()).fold(0.0, f64::max);
        let b = self.g_pt.iter().map(|g| g.amax()).fold(0.0, f64::max);
        a.max(b)
    }
}

fn linearize(scene: &Scene, cameras: &[Camera], points: &[Vector3<f64>], loss: RobustLoss) -> Option<Normal> {
    let dof = camera_dof(scene.mode());
    let mut u = vec![DMatrix::zeros(dof, dof); cameras.len()];
    let mut v = vec![Matrix3::zeros(); points.len()];
    let mut w = Vec::with_capacity(scene.num_observations());
    let mut g_cam = vec![DVector::zeros(dof); cameras.len()];
    let mut g_pt = vec![Vector3::zeros(); points.len()];
    for o in scene.observations() {
        let (cam, x) = (&cameras[o.view], &points[o.point]);
        let (r, z) = residual(cam, x, Vector2::new(o.x, o.y))?;
        let (_, weight) = robust(loss, r.norm_squared());
        let (jc, jp) = jacobians(cam, x, &z);
        let jct = jc.transpose();
        u[o.view] += &jct * &jc * weight;
        v[o.point] += jp.transpose() * jp * weight;
        let mut wk = DMatrix::zeros(dof, 3);
        wk.copy_from(&(&jct * DMatrix::from_column_slice(2, 3, jp.as_slice()) * weight));
        w.push(wk);
        g_cam[o.view] += &jct * DVector::from_column_slice(r.as_slice()) * weight;
        g_pt[o.point] += jp.transpose() * r * weight;
    }
    Some(Normal {
        dof,
        u,
        v,
        w,
        g_cam,
        g_pt,
    })
}

fn damp_dyn(m: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let mut out = m.clone();
    for i in 0..m.nrows() {
        out[(i, i)] += lambda * m[(i, i)].max(f64::MIN_POSITIVE.sqrt());
    }
    out
}

fn damp3(m: &Matrix3<f64>, lambda: f64) -> Matrix3<f64> {
    let mut out = *m;
    for i in 0..3 {
        out[(i, i)] += lambda * m[(i, i)].max(f64::MIN_POSITIVE.sqrt());
    }
    out
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.lu().solve(b)
}

/// Camera increments and point increments of one damped step.
type Step = (Vec<DVector<f64>>, Vec<Vector3<f64>>);

/// Damped step by Schur
/// elimination of the points.
fn step_schur(
    scene: &Scene,
    ne: &Normal,
    lambda: f64,
) -> Option<Step> {
    let (m, dof) = (ne.u.len(), ne.dof);
    let v_inv: Vec<Matrix3<f64>> = ne
        .v
        .iter()
        .map(|v| damp3(v, lambda).try_inverse())
        .collect::<Option<_>>()?;
    let mut s = DMatrix::zeros(m * dof, m * dof);
    let mut rhs = DVector::zeros(m * dof);
    for (i, u) in ne.u.iter().enumerate() {
        s.view_mut((i * dof, i * dof), (dof, dof)).copy_from(&damp_dyn(u, lambda));
        rhs.rows_mut(i * dof, dof).copy_from(&(-&ne.g_cam[i]));
    }
    let obs = scene.observations();
    let pattern = scene.pattern();
    for (j, vi) in v_inv.iter().enumerate() {
        let vi = DMatrix::from_column_slice(3, 3, vi.as_slice());
        let gp = DVector::from_column_slice(ne.g_pt[j].as_slice());
        let ks = pattern.observations_of_point(j);
        for &ka in ks {
            let wa_vi = &ne.w[ka] * &vi;
            let a = obs[ka].view;
            let mut target = rhs.rows_mut(a * dof, dof);
            target += &wa_vi * &gp;
            for &kb in ks {
                let b = obs[kb].view;
                let block = &wa_vi * ne.w[kb].transpose();
                let mut target = s.view_mut((a * dof, b * dof), (dof, dof));
                target -= block;
            }
        }
    }
    let dc = solve_spd(s, &rhs)?;
    let cams: Vec<DVector<f64>> = (0..m).map(|i| dc.rows(i * dof, dof).into_owned()).collect();
    let mut pts = Vec::with_capacity(ne.v.len());
    for (j, vi) in v_inv.iter().enumerate() {
        let mut acc = -ne.g_pt[j];
        for &k in pattern.observations_of_point(j) {
            let wt = ne.w[k].transpose() * &cams[obs[k].view];
            acc -= Vector3::new(wt[0], wt[1], wt[2]);
        }
        pts.push(vi * acc);
    }
    Some((cams, pts))
}

/// The same damped step from the full normal equations.
fn step_dense(
    scene: &Scene,
    ne: &Normal,
    lambda: f64,
) -> Option<Step> {
    let (m, n, dof) = (ne.u.len(), ne.v.len(), ne.dof);
    let size = m * dof + 3 * n;
    let mut h = DMatrix::zeros(size, size);
    let mut g = DVector::zeros(size);
    for (i, u) in ne.u.iter().enumerate() {
        h.view_mut((i * dof, i * dof), (dof, dof)).copy_from(u);
        g.rows_mut(i * dof, dof).copy_from(&ne.g_cam[i]);
    }
    let base = m * dof;
    for (j, v) in ne.v.iter().enumerate() {
        h.view_mut((base + 3 * j, base + 3 * j), (3, 3)).copy_from(v);
        g.rows_mut(base + 3 * j, 3).copy_from(&ne.g_pt[j]);
    }
    for (k, o) in scene.observations().iter().enumerate() {
        let (r, c) = (o.view * dof, base + 3 * o.point);
        let mut upper = h.view_mut((r, c), (dof, 3));
        upper += &ne.w[k];
        let mut lower = h.view_mut((c, r), (3, dof));
        lower += ne.w[k].transpose();
    }
    let d = solve_spd(damp_dyn(&h, lambda), &(-g))?;
    let cams = (0..m).map(|i| d.rows(i * dof, dof).into_owned()).collect();
    let pts = (0..n)
        .map(|j| Vector3::new(d[base + 3 * j], d[base + 3 * j + 1], d[base + 3 * j + 2]))
        .collect();
    Some((cams, pts))
}

fn param_norm(cameras: &[Camera], points: &[Vector3<f64>]) -> f64 {
    let mut s = points.iter().map(|p| p.norm_squared()).sum::<f64>();
    for c in cameras {
        s += match c {
            Camera::Euclidean(p) => p.center.norm_squared() + 1.0,
            Camera::Projective(p) => p.norm_squared(),
        };
    }
    s.sqrt()
}

fn lm_round(
    scene: &Scene,
    cameras: &mut Vec<Camera>,
    points: &mut Vec<Vector3<f64>>,
    cfg: &BaConfig,
) -> Result<(Vec<f64>, usize, Termination), GeometryError> {
    let mut f = ba_objective(scene, cameras, points, cfg.loss);
    if !f.is_finite() {
        return Err(GeometryError::NonFinite("initial objective"));
    }
    let mut history = vec![f];
    let mut lambda = cfg.lambda_init;
    for iter in 0..cfg.max_iters_per_round {
        if f == 0.0 {
            return Ok((history, iter, Termination::GradientTolerance));
        }
        let ne = linearize(scene, cameras, points, cfg.loss).ok_or(GeometryError::NonFinite("projection"))?;
        if ne.grad_inf_norm() < cfg.grad_tol {
            return Ok((history, iter, Termination::GradientTolerance));
        }
        loop {
            let step = match cfg.solver {
                LinearSolver::Schur => step_schur(scene, &ne, lambda),
                LinearSolver::Dense => step_dense(scene, &ne, lambda),
            };
            let Some((dc, dp)) = step else {
                lambda *= cfg.lambda_up;
                if lambda > cfg.lambda_max {
                    return Ok((history, iter, Termination::DampingExhausted));
                }
                continue;
            };
            let cand_c: Vec<Camera> = cameras.iter().zip(&dc).map(|(c, d)| retract(c, d.as_slice())).collect();
            let cand_p: Vec<Vector3<f64>> = points.iter().zip(&dp).map(|(p, d)| p + d).collect();
            let f_new = ba_objective(scene, &cand_c, &cand_p, cfg.loss);
            if f_new.is_finite() && f_new < f {
                let rel = (f - f_new) / f;
                *cameras = cand_c;
                *points = cand_p;
                f = f_new;
                history.push(f);
                lambda = (lambda / cfg.lambda_down).max(f64::MIN_POSITIVE);
                if rel < cfg.rel_tol {
                    return Ok((history, iter + 1, Termination::RelativeDecrease));
                }
                break;
            }
            let step_norm = (dc.iter().map(|d| d.norm_squared()).sum::<f64>()
                + dp.iter().map(|d| d.norm_squared()).sum::<f64>())
            .sqrt();
            if step_norm <= cfg.step_tol * (param_norm(cameras, points) + cfg.step_tol) {
                return Ok((history, iter + 1, Termination::StepTolerance));
            }
            lambda *= cfg.lambda_up;
            if lambda > cfg.lambda_max {
                return Ok((history, iter + 1, Termination::DampingExhausted));
            }
        }
    }
    Ok((history, cfg.max_iters_per_round, Termination::IterationLimit))
}

/// Robust bundle adjustment of `recon` against the measurements of `scene`
/// by Levenberg–Marquardt, in `cfg.rounds` rounds with DLT re-triangulation
/// of the points between them.
pub fn bundle_adjust(
    scene: &Scene,
    recon: &Reconstruction,
    cfg: &BaConfig,
) -> Result<(Reconstruction, BaReport), GeometryError> {
    cfg.validate()?;
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
    if !recon.is_finite() {
        return Err(GeometryError::NonFinite("reconstruction"));
    }
    let mut cameras = recon.cameras.clone();
    let mut points = recon.points.clone();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let mut retriangulated = 0;
        if round > 0 {
            let tri = triangulate(scene, &cameras)?;
            let before = ba_objective(scene, &cameras, &points, cfg.loss);
            let mut cand = points.clone();
            for (j, x) in tri.points.iter().enumerate() {
                if !tri.degenerate[j] {
                    cand[j] = *x;
                    retriangulated += 1;
                }
            }
            // Keep the adjusted points if the linear estimate is worse.
            if ba_objective(scene, &cameras, &cand, cfg.loss) <= before {
                points = cand;
            } else {
                retriangulated = 0;
            }
        }
        let (history, iterations, termination) = lm_round(scene, &mut cameras, &mut points, cfg)?;
        rounds.push(RoundReport {
            objective_history: history,
            iterations,
            termination,
            retriangulated,
            mean_reprojection: mean_reprojection(scene, &cameras, &points),
        });
    }
    Ok((
        Reconstruction {
            mode: recon.mode,
            cameras,
            points,
        },
        BaReport { rounds },
    ))
}
