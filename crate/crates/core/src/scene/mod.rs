//! Point-track scenes.
//!
//! A [`Scene`] holds `m` views, `n` scene points and the sparse set of
//! measurements `(view, point, x, y)`. Its observability pattern is derived
//! once at construction and the scene is immutable afterwards; operations
//! that change measurements (normalization, augmentation, outlier
//! injection) build a new scene with the same pattern.

mod io;
mod normalize;
mod subset;
mod synth;

use nalgebra::{Matrix3, Vector3};

use crate::camera::{Mode, Pose};

pub use io::{load_scene, save_scene, scene_from_json, scene_to_json};
pub use normalize::{normalize_euclidean, normalize_for_mode, normalize_hartley, NormalizationRecord};
pub use subset::{subsample_views, SubScene};
pub use synth::{generate_synthetic, SynthConfig};

/// Minimum number of views observing every point.
pub const MIN_VIEWS_PER_POINT: usize = 2;
/// Minimum number of points observed in every view.
pub const MIN_POINTS_PER_VIEW: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum SceneError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scene JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("observation {index}: view {view} out of range for {num_views} views")]
    ViewOutOfRange {
        index: usize,
        view: usize,
        num_views: usize,
    },
    #[error("observation {index}: point {point} out of range for {num_points} points")]
    PointOutOfRange {
        index: usize,
        point: usize,
        num_points: usize,
    },
    #[error("duplicate observation of point {point} in view {view}")]
    DuplicateObservation { view: usize, point: usize },
    #[error("point {point} is observed in {views} view(s), at least 2 required")]
    UnderObservedPoint { point: usize, views: usize },
    #[error("view {view} observes {points} point(s), at least 2 required")]
    UnderObservedView { view: usize, points: usize },
    #[error("non-finite coordinate in observation {index}")]
    NonFiniteObservation { index: usize },
    #[error("{field} has {found} entries, expected {expected}")]
    CountMismatch {
        field: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("ground-truth quaternion of view {view} is not unit length")]
    NonUnitQuaternion { view: usize },
    #[error("intrinsics are required for every view")]
    MissingIntrinsics,
    #[error("intrinsics matrix of view {view} is singular")]
    SingularIntrinsics { view: usize },
    #[error("all points of view {view} coincide; normalization scale is undefined")]
    DegenerateView { view: usize },
    #[error("operation requires {expected} mode, scene is {found}")]
    ModeMismatch { expected: Mode, found: Mode },
    #[error("invalid generator configuration: {0}")]
    InvalidConfig(String),
    #[error("visibility constraints could not be met after {attempts} attempts")]
    InfeasibleVisibility { attempts: usize },
    #[error("invalid view subset: {0}")]
    InvalidSubset(String),
    #[error("no views or points remain after filtering the subset")]
    EmptySubset,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub view: usize,
    pub point: usize,
    pub x: f64,
    pub y: f64,
}

/// Adjacency of the binary observability matrix, stored both ways.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservabilityPattern {
    view_obs: Vec<Vec<usize>>,
    point_obs: Vec<Vec<usize>>,
    view_of: Vec<usize>,
    point_of: Vec<usize>,
}

impl ObservabilityPattern {
    fn build(num_views: usize, num_points: usize, observations: &[Observation]) -> Self {
        let mut view_obs = vec![Vec::new(); num_views];
        let mut point_obs = vec![Vec::new(); num_points];
        for (k, o) in observations.iter().enumerate() {
            view_obs[o.view].push(k);
            point_obs[o.point].push(k);
        }
        Self {
            view_obs,
            point_obs,
            view_of: observations.iter().map(|o| o.view).collect(),
            point_of: observations.iter().map(|o| o.point).collect(),
        }
    }

    /// Total observation count `N`.
    pub fn len(&self) -> usize {
        self.view_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.view_of.is_empty()
    }

    /// Observation indices belonging to `view`.
    pub fn observations_in_view(&self, view: usize) -> &[usize] {
        &self.view_obs[view]
    }

    /// Observation indices belonging to `point`.
    pub fn observations_of_point(&self, point: usize) -> &[usize] {
        &self.point_obs[point]
    }

    /// Points observed in `view`, in observation order.
    pub fn points_in_view(&self, view: usize) -> Vec<usize> {
        self.view_obs[view].iter().map(|&k| self.point_of[k]).collect()
    }

    /// Views observing `point`, in observation order.
    pub fn views_of_point(&self, point: usize) -> Vec<usize> {
        self.point_obs[point].iter().map(|&k| self.view_of[k]).collect()
    }

    /// View index of every observation.
    pub fn view_index(&self) -> &[usize] {
        &self.view_of
    }

    /// Point index of every observation.
    pub fn point_index(&self) -> &[usize] {
        &self.point_of
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    num_views: usize,
    num_points: usize,
    mode: Mode,
    observations: Vec<Observation>,
    intrinsics: Option<Vec<Matrix3<f64>>>,
    gt_poses: Option<Vec<Pose>>,
    gt_points: Option<Vec<Vector3<f64>>>,
    pattern: ObservabilityPattern,
}

/// Everything needed to build a [`Scene`]; validated by [`Scene::new`].
#[derive(Debug, Clone)]
pub struct SceneParts {
    pub num_views: usize,
    pub num_points: usize,
    pub mode: Mode,
    pub observations: Vec<Observation>,
    pub intrinsics: Option<Vec<Matrix3<f64>>>,
    pub gt_poses: Option<Vec<Pose>>,
    pub gt_points: Option<Vec<Vector3<f64>>>,
}

impl Scene {
    pub fn new(parts: SceneParts) -> Result<Self, SceneError> {
        let SceneParts {
            num_views,
            num_points,
            mode,
            observations,
            intrinsics,
            gt_poses,
            gt_points,
        } = parts;
        let mut seen = std::collections::HashSet::with_capacity(observations.len());
        for (index, o) in observations.iter().enumerate() {
            if o.view >= num_views {
                return Err(SceneError::ViewOutOfRange {
                    index,
                    view: o.view,
                    num_views,
                });
            }
            if o.point >= num_points {
                return Err(SceneError::PointOutOfRange {
                    index,
                    point: o.point,
                    num_points,
                });
            }
            if !o.x.is_finite() || !o.y.is_finite() {
                return Err(SceneError::NonFiniteObservation { index });
            }
            if !seen.insert((o.view, o.point)) {
                return Err(SceneError::DuplicateObservation {
                    view: o.view,
                    point: o.point,
                });
            }
        }
        let check_count = |field, found, expected| {
            if found != expected {
                Err(SceneError::CountMismatch {
                    field,
                    found,
                    expected,
                })
            } else {
                Ok(())
            }
        };
        if let Some(k) = &intrinsics {
            check_count("intrinsics", k.len(), num_views)?;
        }
        if let Some(p) = &gt_poses {
            check_count("gt_poses", p.len(), num_views)?;
            for (view, pose) in p.iter().enumerate() {
                if (pose.rotation.quaternion().norm() - 1.0).abs() > 1e-6 {
                    return Err(SceneError::NonUnitQuaternion { view });
                }
            }
        }
        if let Some(x) = &gt_points {
            check_count("gt_points", x.len(), num_points)?;
        }
        let pattern = ObservabilityPattern::build(num_views, num_points, &observations);
        for point in 0..num_points {
            let views = pattern.observations_of_point(point).len();
            if views < MIN_VIEWS_PER_POINT {
                return Err(SceneError::UnderObservedPoint { point, views });
            }
        }
        for view in 0..num_views {
            let points = pattern.observations_in_view(view).len();
            if points < MIN_POINTS_PER_VIEW {
                return Err(SceneError::UnderObservedView { view, points });
            }
        }
        Ok(Self {
            num_views,
            num_points,
            mode,
            observations,
            intrinsics,
            gt_poses,
            gt_points,
            pattern,
        })
    }

    pub fn num_views(&self) -> usize {
        self.num_views
    }

    pub fn num_points(&self) -> usize {
        self.num_points
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn pattern(&self) -> &ObservabilityPattern {
        &self.pattern
    }

    pub fn intrinsics(&self) -> Option<&[Matrix3<f64>]> {
        self.intrinsics.as_deref()
    }

    pub fn gt_poses(&self) -> Option<&[Pose]> {
        self.gt_poses.as_deref()
    }

    pub fn gt_points(&self) -> Option<&[Vector3<f64>]> {
        self.gt_points.as_deref()
    }

    pub fn to_parts(&self) -> SceneParts {
        SceneParts {
            num_views: self.num_views,
            num_points: self.num_points,
            mode: self.mode,
            observations: self.observations.clone(),
            intrinsics: self.intrinsics.clone(),
            gt_poses: self.gt_poses.clone(),
            gt_points: self.gt_points.clone(),
        }
    }

    /// Same pattern and metadata with new measurement coordinates, one per
    /// observation in observation order.
    pub fn with_coordinates(&self, coords: &[[f64; 2]]) -> Result<Self, SceneError> {
        if coords.len() != self.observations.len() {
            return Err(SceneError::CountMismatch {
                field: "coordinates",
                found: coords.len(),
                expected: self.observations.len(),
            });
        }
        let mut parts = self.to_parts();
        for (o, c) in parts.observations.iter_mut().zip(coords) {
            o.x = c[0];
            o.y = c[1];
        }
        Scene::new(parts)
    }

    pub fn with_gt_poses(&self, poses: Vec<Pose>) -> Result<Self, SceneError> {
        let mut parts = self.to_parts();
        parts.gt_poses = Some(poses);
        Scene::new(parts)
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        let mut s = self.clone();
        s.mode = mode;
        s
    }

    /// Measurement coordinates in observation order.
    pub fn coordinates(&self) -> Vec<[f64; 2]> {
        self.observations.iter().map(|o| [o.x, o.y]).collect()
    }
}
