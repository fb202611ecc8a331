use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors surfaced by the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's contract (bad argument, mismatched
    /// shapes, out-of-domain point).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A requested configuration exceeds what the implementation supports.
    #[error("capability: {0}")]
    Capability(String),

    /// A quadrature rule collapsed (zero or non-finite total weight). This
    /// usually signals a surrogate/target mismatch upstream.
    #[error("degenerate rule: {0}")]
    DegenerateRule(String),

    /// An internal invariant failed; indicates a bug, not user error.
    #[error("internal invariant: {0}")]
    Invariant(String),

    /// The optimizer hit a non-finite loss.
    #[error("fit aborted at iteration {iteration}: {detail}")]
    FitAborted { iteration: usize, detail: String },

    /// A forward solve failed.
    #[error("forward solver failure at fidelity {fidelity}: {detail}")]
    Solver { fidelity: usize, detail: String },
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
}
