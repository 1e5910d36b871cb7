use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate element {element}: signed area {area:e}")]
    DegenerateElement { element: usize, area: f64 },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("unknown boundary tag `{0}`")]
    UnknownBoundaryTag(String),

    #[error("non-positive jacobian det F = {0:e}")]
    NonPositiveJacobian(f64),

    #[error("log argument out of domain: {0:e}")]
    LogDomain(f64),

    #[error("inverse Langevin argument {0} outside (-1, 1)")]
    DomainError(f64),

    #[error("element {element} inverted (det F = {det:e})")]
    ElementInversion { element: usize, det: f64 },

    #[error("load step {step}: element {element} inverted")]
    StepInversion { step: usize, element: usize },

    #[error("Newton iteration did not converge at step {step} (residual {residual:e})")]
    NoConvergence { step: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("meshing failed: {0}")]
    MeshingFailure(String),

    #[error("kernel system is numerically singular")]
    SingularKernel,

    #[error("point ({x}, {y}) lies outside the mesh")]
    PointOutsideDomain { x: f64, y: f64 },

    #[error("schema error at `{path}`: {message}")]
    Schema { path: String, message: String },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("unknown deformation path `{0}`")]
    UnknownPath(String),

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("snapshot {snapshot}: element {element} inverted")]
    SnapshotInversion { snapshot: usize, element: usize },

    #[error("every ensemble member failed")]
    AllMembersFailed,

    #[error("truth values have zero variance")]
    DegenerateTruth,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
