//! Classical geometry: DLT triangulation, robust bundle adjustment,
//! similarity alignment and the evaluation metrics.

mod align;
mod ba;
mod metrics;
mod triangulate;

pub use align::{align_similarity, SimilarityTransform, COLLINEAR_TOL, NEAR_DEGENERATE_RATIO};
pub use ba::{
    ba_objective, bundle_adjust, mean_reprojection, BaConfig, BaReport, LinearSolver, RobustLoss,
    RoundReport, Termination,
};
pub use metrics::{metrics, reprojection_px, rotation_angle, transform_reconstruction, Metrics};
pub use triangulate::{triangulate, triangulate_point, Triangulation, DLT_MIN_W, DLT_RANK_TOL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeometryError {
    #[error("{what}: got {found}, expected {expected}")]
    DimMismatch {
        what: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("reconstruction and scene modes differ")]
    ModeMismatch,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
}
