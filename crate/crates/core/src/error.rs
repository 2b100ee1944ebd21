//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("non-finite value at index {index}: {value}")]
    NonFinite { index: usize, value: f64 },

    #[error("singular deformation: J = {j} at element ({row}, {col}), quadrature point {qp}")]
    SingularDeformation { j: f64, row: usize, col: usize, qp: usize },

    #[error("well-posedness error: {0}")]
    WellPosedness(String),

    #[error("linear solver failed to converge after {iterations} iterations (residual {residual})")]
    SolverDiverged { iterations: usize, residual: f64 },

    #[error("Newton iteration diverged at load step {step} (residual norm {residual})")]
    NewtonDiverged { step: usize, residual: f64 },

    #[error("generation error: {0}")]
    Generation(String),

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("model build error in layer {layer}: {message}")]
    ModelBuild { layer: usize, message: String },

    #[error("training aborted at epoch {epoch}, batch {batch}: {message}")]
    TrainingAborted { epoch: usize, batch: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("bundle format error: {0}")]
    BundleFormat(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
