use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("network is disconnected: bus {0} is unreachable from bus {1}")]
    Disconnected(u32, u32),

    #[error("unknown bus id {0}")]
    UnknownBus(u32),

    #[error("unknown branch index {0}")]
    UnknownBranch(usize),

    #[error("power flow did not converge after {iterations} iterations (mismatch {mismatch:.3e} pu)")]
    PowerFlowDiverged { iterations: usize, mismatch: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("state vector is not an equilibrium: worst residual {residual:.3e} at state `{state}`")]
    NotEquilibrium { state: String, residual: f64 },

    #[error("damping ratio undefined for a zero eigenvalue")]
    ZeroEigenvalue,

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("matrix is defective or nearly so (eigenvector condition estimate {condition:.3e})")]
    Defective { condition: f64 },

    #[error("total participation is zero")]
    ZeroParticipation,

    #[error("integration failed at t = {t:.6} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("ringdown fit failed: {0}")]
    Ringdown(String),

    #[error("scenario error at `{path}`: {message}")]
    Schema { path: String, message: String },

    /// Message already includes the inner error, so it is not exposed as a source.
    #[error("{stage}: {inner}")]
    Stage { stage: &'static str, inner: Box<Error> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            inner: Box::new(self),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
