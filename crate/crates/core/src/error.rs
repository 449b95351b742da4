use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Matrices or vectors whose shapes do not fit together.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The forward Euler step is too long for the fastest loss rate.
    #[error("forward Euler unstable: dt = {dt} s must be below {max_dt} s (1 / max |A_ii|)")]
    Stability { dt: f64, max_dt: f64 },

    #[error("system violates model invariants: {0}")]
    Invariant(String),

    #[error("invalid RC network: {0}")]
    Network(String),

    #[error("ambient series: {0}")]
    Ambient(String),

    #[error("infeasible at step {step}: {what}")]
    Infeasible { step: usize, what: String },

    #[error("solver failure: {0}")]
    Solver(String),

    /// The corridor sampler ran out of admissible power at this step.
    #[error("corridor dead end at step {0}")]
    DeadEnd(usize),

    #[error("enumeration budget exceeded: {count} trajectories > {budget}")]
    Budget { count: f64, budget: f64 },

    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
