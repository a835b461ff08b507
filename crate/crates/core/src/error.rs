use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented constraint.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The server received a round whose uploads do not match the schedule.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The closed-form expectations only hold for uniformly drawn masks.
    #[error("unsupported sampling law: {0}")]
    UnsupportedLaw(String),

    #[error("mean-square unstable: spectral radius of F is {spectral_radius:.9} (must be < 1)")]
    Instability { spectral_radius: f64 },

    #[error("recursion diverged at iteration {iteration} (value {value:e})")]
    Divergence { iteration: usize, value: f64 },

    #[error("degenerate stability bound: {0}")]
    DegenerateBound(String),

    #[error("degenerate configuration for the optimal stepsize: {0}")]
    DegenerateStepsize(String),

    #[error("linear solve did not converge: {0}")]
    Solver(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}
