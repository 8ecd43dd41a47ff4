use thiserror::Error;

/// Errors produced by the hybrid-dynamics toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid resolution too coarse: {0}")]
    Resolution(String),

    #[error("capacity exceeded: size {size} > cap {cap}")]
    Capacity { size: usize, cap: usize },

    #[error("unsupported moment order {0} (orders 0..=2 are supported)")]
    UnsupportedOrder(usize),

    #[error("unsupported symmetry: {0}")]
    UnsupportedSymmetry(String),

    #[error("invalid generator: {0}")]
    GeneratorValidity(String),

    #[error("numerical blow-up at step {step} (t = {time})")]
    NumericalBlowup { step: usize, time: f64 },

    #[error("monitor abort at t = {time}: {reason}")]
    MonitorAbort { time: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
