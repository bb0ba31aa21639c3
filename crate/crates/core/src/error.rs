use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Caller supplied an input of the wrong shape or with non-finite entries.
    #[error("input error: {0}")]
    Input(String),

    /// A parameter is outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// A network description violates a structural invariant.
    #[error("invalid network: {0}")]
    Validation(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// Evaluation produced a non-finite value.
    #[error("numeric overflow in layer {layer}, neuron {neuron}")]
    NumericOverflow { layer: usize, neuron: usize },

    /// A Monte Carlo sample produced a non-finite network output.
    #[error("non-finite network output at sample {sample:?}")]
    NonFiniteSample { sample: Vec<f64> },

    #[error("quadrature failed to reach tolerance {tolerance:e} (estimated error {estimate:e})")]
    Convergence { tolerance: f64, estimate: f64 },

    #[error("training diverged at step {step} (loss {loss})")]
    Training { step: usize, loss: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
