use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FluxError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("grid mismatch: {0}")]
    Dimension(String),

    #[error("field is not mean-free (mean {mean:.3e}, scale {scale:.3e})")]
    NotMeanFree { mean: f64, scale: f64 },

    #[error("velocity is not incompressible (max |div u| = {max_div:.3e}, scale {scale:.3e})")]
    NotIncompressible { max_div: f64, scale: f64 },

    #[error("stream function does not vanish on the boundary (max deviation {max_deviation:.3e})")]
    BoundaryViolation { max_deviation: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:.3e}, target {target:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        target: f64,
    },

    #[error("degenerate test function: {0}")]
    DegenerateTestFunction(String),

    #[error("degenerate flow: {0}")]
    DegenerateFlow(String),

    #[error("CFL violation: Courant number {courant:.3} exceeds 0.9, try dt <= {suggested_dt:.3e}")]
    Cfl { courant: f64, suggested_dt: f64 },

    #[error("inconsistent inputs: {0}")]
    Consistency(String),

    #[error("resolution refused: {0}")]
    Resolution(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for FluxError {
    fn from(e: std::io::Error) -> Self {
        FluxError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, FluxError>;
