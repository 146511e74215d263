use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} lies outside [0, 1]")]
    Domain { what: &'static str, value: f64 },

    #[error("derivative undefined at kink x = {x} (left {left}, right {right})")]
    Kink { x: f64, left: f64, right: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("eigen solver did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("hole endpoint {endpoint} is not a bin edge of the {n}-bin grid")]
    Alignment { endpoint: f64, n: usize },

    #[error("quadrature on [{lo}, {hi}] did not settle within refinement depth {depth}")]
    Quadrature { lo: f64, hi: f64, depth: usize },

    #[error("only {points} usable fit points (need 5)")]
    InsufficientDecay { points: usize },

    #[error("degenerate: {0}")]
    Degenerate(String),

    #[error("all mass fell into the hole at step {step}")]
    TotalEscape { step: usize },

    #[error("extension exceeded {cap} domains while expanding level {level}")]
    Explosion { cap: usize, level: usize },

    #[error("no recurrent component within L_max = {0}")]
    TruncationTooSmall(usize),

    #[error("cylinder [{lo}, {hi}] with return time {return_time} violates the Markov property: {detail}")]
    Markov {
        lo: f64,
        hi: f64,
        return_time: usize,
        detail: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::Domain { what, value })
    }
}
