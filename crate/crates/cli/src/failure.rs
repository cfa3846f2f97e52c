use gasfm::geometry::GeometryError;
use gasfm::gnn::GnnError;
use gasfm::objective::ObjectiveError;
use gasfm::recon::ReconError;
use gasfm::scene::SceneError;
use gasfm::train::TrainError;

pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

/// A failed command with its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<ReconError> for Failure {
    fn from(e: ReconError) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::validation(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Self::validation(format!("config: {e}"))
    }
}

impl From<GnnError> for Failure {
    fn from(e: GnnError) -> Self {
        match e {
            GnnError::NonFinite { .. } => Self::numeric(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<ObjectiveError> for Failure {
    fn from(e: ObjectiveError) -> Self {
        match e {
            ObjectiveError::NonFinite(_) | ObjectiveError::SingularProjection => Self::numeric(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<GeometryError> for Failure {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::NonFinite(_) => Self::numeric(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Gnn(g) => g.into(),
            TrainError::Objective(o) => o.into(),
            TrainError::NonFiniteGradient | TrainError::Diverged { .. } => Self::numeric(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}
