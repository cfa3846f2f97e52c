use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::TrainError;
use crate::scene::Scene;

/// Views keep at least this many inliers.
pub const MIN_INLIERS_PER_VIEW: usize = 8;
/// Points keep at least this many inlier observations.
pub const MIN_INLIERS_PER_POINT: usize = 2;
/// Sampling rounds before declaring the requested rate infeasible.
pub const OUTLIER_MAX_ROUNDS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierInjection {
    /// Network input, with the selected measurements replaced.
    pub corrupted: Scene,
    /// The unmodified scene, used as the loss target.
    pub clean: Scene,
    /// `mask[k]` is set for each replaced observation.
    pub mask: Vec<bool>,
}

impl OutlierInjection {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Number of observations corrupted at rate `eta`.
pub fn outlier_target(num_observations: usize, eta: f64) -> usize {
    (eta * num_observations as f64).round() as usize
}

/// Picks exactly `round(eta · N)` observations such that every view keeps
/// at least [`MIN_INLIERS_PER_VIEW`] inliers and every point at least
/// [`MIN_INLIERS_PER_POINT`].
fn select(scene: &Scene, eta: f64, rng: &mut impl Rng) -> Result<Vec<usize>, TrainError> {
    let n = scene.num_observations();
    let target = outlier_target(n, eta);
    if target == 0 {
        return Ok(Vec::new());
    }
    let pattern = scene.pattern();
    let (view_of, point_of) = (pattern.view_index(), pattern.point_index());
    let view_count: Vec<usize> = (0..scene.num_views())
        .map(|i| pattern.observations_in_view(i).len())
        .collect();
    let point_count: Vec<usize> = (0..scene.num_points())
        .map(|j| pattern.observations_of_point(j).len())
        .collect();
    let mut fixed: Vec<bool> = (0..n)
        .map(|k| {
            view_count[view_of[k]] <= MIN_INLIERS_PER_VIEW
                || point_count[point_of[k]] <= MIN_INLIERS_PER_POINT
        })
        .collect();

    for _ in 0..OUTLIER_MAX_ROUNDS {
        let free: Vec<usize> = (0..n).filter(|&k| !fixed[k]).collect();
        if free.len() < target {
            break;
        }
        // Over-sample so enough candidates survive the constraint check.
        let nu = target as f64 / free.len() as f64;
        let frac = 1.0 / (0.5 / nu + 0.5);
        let take = ((frac * free.len() as f64).round() as usize).clamp(target, free.len());
        let candidates: Vec<usize> = sample(rng, free.len(), take).into_iter().map(|i| free[i]).collect();

        let mut view_left = view_count.clone();
        let mut point_left = point_count.clone();
        for &k in &candidates {
            view_left[view_of[k]] -= 1;
            point_left[point_of[k]] -= 1;
        }
        let bad_view: Vec<bool> = view_left.iter().map(|&c| c < MIN_INLIERS_PER_VIEW).collect();
        let bad_point: Vec<bool> = point_left.iter().map(|&c| c < MIN_INLIERS_PER_POINT).collect();
        for k in 0..n {
            if bad_view[view_of[k]] || bad_point[point_of[k]] {
                fixed[k] = true;
            }
        }
        let kept: Vec<usize> = candidates.into_iter().filter(|&k| !fixed[k]).collect();
        if kept.len() >= target {
            let mut chosen: Vec<usize> =
                sample(rng, kept.len(), target).into_iter().map(|i| kept[i]).collect();
            chosen.sort_unstable();
            return Ok(chosen);
        }
    }
    Err(TrainError::OutlierInfeasible {
        requested: target,
        observations: n,
    })
}

/// Draws from the bivariate normal with the given mean and covariance.
/// A covariance of rank below two is replaced by an isotropic one with its
/// largest eigenvalue.
fn draw_normal(mean: &Vector2<f64>, cov: &Matrix2<f64>, rng: &mut impl Rng) -> Vector2<f64> {
    let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
    let eig = SymmetricEigen::new(*cov);
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo > 1e-12 * hi.max(f64::MIN_POSITIVE) {
        if let Some(chol) = cov.cholesky() {
            return mean + chol.l() * z;
        }
    }
    mean + z * hi.max(0.0).sqrt()
}

/// Replaces a fraction `eta` of the measurements with draws from a normal
/// fitted to each view's remaining inliers.
pub fn inject_outliers(scene: &Scene, eta: f64, rng: &mut impl Rng) -> Result<OutlierInjection, TrainError> {
    if !(0.0..1.0).contains(&eta) {
        return Err(TrainError::Config("outlier rate must lie in [0, 1)".into()));
    }
    let chosen = select(scene, eta, rng)?;
    let mut mask = vec![false; scene.num_observations()];
    for &k in &chosen {
        mask[k] = true;
    }
    let mut coords = scene.coordinates();
    let obs = scene.observations();
    for view in 0..scene.num_views() {
        let ids = scene.pattern().observations_in_view(view);
        if !ids.iter().any(|&k| mask[k]) {
            continue;
        }
        let inliers: Vec<Vector2<f64>> = ids
            .iter()
            .filter(|&&k| !mask[k])
            .map(|&k| Vector2::new(obs[k].x, obs[k].y))
            .collect();
        let count = inliers.len() as f64;
        let mean = inliers.iter().sum::<Vector2<f64>>() / count;
        let cov = inliers
            .iter()
            .map(|x| (x - mean) * (x - mean).transpose())
            .sum::<Matrix2<f64>>()
            / (count - 1.0);
        for &k in ids.iter().filter(|&&k| mask[k]) {
            let d = draw_normal(&mean, &cov, rng);
            coords[k] = [d.x, d.y];
        }
    }
    Ok(OutlierInjection {
        corrupted: scene.with_coordinates(&coords)?,
        clean: scene.clone(),
        mask,
    })
}
