use thiserror::Error;

/// Errors raised while building or solving a scattering problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent or degenerate geometry.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Offset sources folded over because the offset exceeds the local radius of curvature.
    #[error("curvature error: {0}")]
    Curvature(String),

    /// A matrix block could not be assembled.
    #[error("assembly error: {0}")]
    Assembly(String),

    /// Non-finite values appeared during a solve.
    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: &'static str, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
