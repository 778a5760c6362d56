use thiserror::Error;

/// Errors raised by network construction, analysis and synthesis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("spring between {0} and {1} has zero rest length")]
    ZeroRestLength(String, String),
    #[error("omega^2 = {omega_sq:e} is within the guard distance of resonance {resonance:e}")]
    ResonanceProximity { omega_sq: f64, resonance: f64 },
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("rank hypothesis violated: {0}")]
    RankDeficient(String),
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    #[error("gadget verification failed: {0}")]
    GadgetVerificationFailed(String),
    #[error("retries exhausted after {attempts} attempts: {reason}")]
    RetryExhausted { attempts: usize, reason: String },
    #[error("no balancing point: {0}")]
    NoBalancingPoint(String),
    #[error("degenerate placement: {0}")]
    DegeneratePlacement(String),
    #[error("negative stiffness {stiffness:e} on spring {spring}")]
    NegativeStiffness { spring: usize, stiffness: f64 },
    #[error("floppy modes cannot be eliminated: {0}")]
    UnfixableFloppy(String),
    #[error("not supported: {0}")]
    NotSupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
