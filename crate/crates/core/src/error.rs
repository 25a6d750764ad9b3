use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("integration failed at t = {time}: {reason}")]
    Integration { time: f64, reason: String },

    #[error("singular arc degenerate: L(λ(t)) reached zero near t = {time}")]
    SglcDegenerate { time: f64 },

    #[error("shooting did not converge after {iterations} iterations (residual {residual:.3e})")]
    ShootingDiverged { iterations: usize, residual: f64 },

    #[error("switching times out of order: need 0 < τ1 = {tau1} < τ2 = {tau2} < T = {horizon}")]
    SwitchingOrder { tau1: f64, tau2: f64, horizon: f64 },

    #[error("modified cost unavailable: L_f1 c is not identically zero and L²_f1 c(x_f) = {value} is not positive")]
    SecondLieDerivativeNotPositive { value: f64 },

    #[error("{what} failed: {detail}")]
    Solver { what: &'static str, detail: String },

    #[error("unknown bracket word `{0}`")]
    UnknownWord(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
