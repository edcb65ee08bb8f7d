use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("ambiguous geodesic between base points (axis {axis} displacement is exactly half the side)")]
    AmbiguousGeodesic { axis: usize },

    #[error("quadrature failed to converge: {0}")]
    Quadrature(String),

    #[error("bandwidth regime violated: {inequality} is not increasing ({detail})")]
    RegimeViolation { inequality: &'static str, detail: String },

    #[error("cannot extend a level-{from} cloud down to level {to}")]
    NestingOrder { from: u64, to: u64 },

    #[error("zero density estimate at vertex {vertex}")]
    ZeroDensityEstimate { vertex: usize },

    #[error("exchange on the diagonal or outside the vertex set ({x}, {y})")]
    InvalidExchange { x: usize, y: usize },

    #[error("graph with {0} vertices is too large for exhaustive enumeration (max 12)")]
    TooManyVertices(usize),

    #[error("expected {estimated:.3e} jump events exceeds the budget {budget:.3e}")]
    RateOverflow { estimated: f64, budget: f64 },

    #[error("time step {dt:.3e} violates the stability bound; use dt <= {suggested:.3e}")]
    UnstableTimeStep { dt: f64, suggested: f64 },

    #[error("unknown {kind} `{name}`")]
    UnknownName { kind: &'static str, name: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
