use thiserror::Error;

/// Errors raised by the solvers and the I/O layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ellipticity violated at node {node}: vol2 = {value}")]
    Ellipticity { node: usize, value: f64 },
    #[error("{solver} did not converge after {iterations} iterations (last residual {residual:e})")]
    IterationLimit {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },
    #[error("linear solve failed: {0}")]
    Singular(String),
    #[error("no free boundary: stopping is optimal on the whole grid")]
    NoBoundary,
    #[error("degenerate flow: {0}")]
    DegenerateFlow(String),
    #[error("tail evaluation failed: {0}")]
    Tail(String),
    #[error("equilibrium did not converge after {iterations} outer iterations{}", if *.oscillating { " (oscillation detected, try a smaller relaxation weight)" } else { "" })]
    NonConvergence {
        iterations: usize,
        oscillating: bool,
        trace: Vec<crate::equilibrium::TraceRecord>,
    },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::IterationLimit { .. } | Error::NonConvergence { .. } | Error::Singular(_) => 3,
            Error::Io(_) => 4,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
