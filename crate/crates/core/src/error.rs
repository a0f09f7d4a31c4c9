//! Crate-wide error type.

use thiserror::Error;

/// Errors reported by circuit construction, simulation and testing.
#[derive(Debug, Error)]
pub enum Error {
    /// A 4x4 matrix violates the even/odd block structure or the
    /// determinant-match condition required of a matchgate.
    #[error("not a matchgate: {0}")]
    NotMatchgate(String),

    /// A matrix expected to be unitary is not, within tolerance.
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),

    /// A matrix expected to be orthogonal is not, within tolerance.
    #[error("matrix is not orthogonal (max deviation {0:.3e})")]
    NotOrthogonal(f64),

    /// A qubit or mode index is out of range for the register.
    #[error("index {index} out of range for width {width}")]
    IndexOutOfRange { index: usize, width: usize },

    /// Operands have incompatible lengths or widths.
    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    /// The circuit contains an operation the consumer cannot handle
    /// (e.g. a CZ gate reaching the covariance simulator).
    #[error("unsupported operation: {0}")]
    UnsupportedOp(String),

    /// Two-qubit gates must act on adjacent lines.
    #[error("gate on ({0}, {1}) must act on adjacent lines")]
    NonAdjacent(usize, usize),

    /// A probability distribution is malformed (negative weight or
    /// normalization failure beyond tolerance).
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// A channel is not completely positive and trace preserving.
    #[error("channel is not CPTP: {0}")]
    NotCptp(String),

    /// A measurement outcome was forced on a branch of probability
    /// (numerically) zero.
    #[error("forced outcome {outcome} on qubit {qubit} has probability {prob:.3e}")]
    ZeroProbabilityBranch {
        qubit: usize,
        outcome: u8,
        prob: f64,
    },

    /// An adaptive correction references measurement labels that have not
    /// been recorded, or its table is missing an outcome key.
    #[error("adaptive correction lookup failed: {0}")]
    CorrectionLookup(String),

    /// No Pauli correction reproduces the ideal gate on some gadget
    /// branch; indicates an inconsistent wiring convention.
    #[error(
        "gadget correction search failed for outcome {0}; wiring conventions are inconsistent"
    )]
    CorrectionSearch(String),

    /// Statistical test input is degenerate (empty sample, zero spread).
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Configuration file or value is invalid.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Binary state dump does not start with the expected magic bytes or
    /// has a malformed payload.
    #[error("malformed state dump: {0}")]
    MalformedDump(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
