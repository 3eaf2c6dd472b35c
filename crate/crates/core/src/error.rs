use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("gamma function pole at x = {0}")]
    Pole(f64),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("evaluation at a singular point: {0}")]
    Singular(String),

    #[error("input not integrable against the kernel: {0}")]
    NonIntegrable(String),

    #[error("mesh too coarse: {0}")]
    MeshTooCoarse(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error("system matrix lost positive definiteness at iteration {0}")]
    Indefinite(usize),

    #[error("fixed-point iteration diverged: {0}")]
    Diverged(String),

    #[error("nonpositive field value {value} at {location}")]
    NonPositive { value: f64, location: String },

    #[error("sample outside the field's domain: {0}")]
    OutsideDomain(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
