use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("empty result: {0}")]
    Empty(String),

    #[error("player {player}: budget root not bracketed after {iterations} iterations (G(lo) = {g_lo:e}, G(hi) = {g_hi:e})")]
    RootBracket {
        player: usize,
        iterations: usize,
        g_lo: f64,
        g_hi: f64,
    },

    #[error("player {player}: no strictly feasible starting allocation")]
    InfeasibleStart { player: usize },

    #[error("player {player}: Newton stagnation, residual {residual:e}")]
    Stagnation { player: usize, residual: f64 },

    #[error("constraint system of player {player} is numerically singular (condition estimate {condition:e})")]
    IllConditioned { player: usize, condition: f64 },

    #[error("singular rank-one update: denominator {0:e}")]
    SingularUpdate(f64),

    #[error("non-finite value in conjugate gradient at iteration {0}")]
    NonFiniteIterate(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no feasible (beta, gamma) pair above beta = 1e-8")]
    NoFeasibleStep,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
