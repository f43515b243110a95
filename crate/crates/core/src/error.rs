use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate curve: |γ'(t)| = {speed:e} at t = {t}")]
    DegenerateCurve { t: f64, speed: f64 },

    #[error("point ({x}, {y}) lies outside the closed domain")]
    OutsideDomain { x: f64, y: f64 },

    #[error("mesh invariant violated: {0}")]
    InvalidMesh(String),

    #[error("nonpositive weight a = {value:e} at ({x}, {y})")]
    NonpositiveWeight { x: f64, y: f64, value: f64 },

    #[error("incompatible Neumann data: |∫a f| = {defect:e} exceeds {allowed:e}")]
    Incompatible { defect: f64, allowed: f64 },

    #[error("linear solver breakdown: {0}")]
    SolverBreakdown(String),

    #[error("eigensolver did not converge: worst residual {worst_residual:e}")]
    EigenNonConvergence { worst_residual: f64 },

    #[error("Newton iteration diverged after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },

    #[error("overflow guard tripped: max |u| = {max_abs:e} exceeds {guard}")]
    OverflowGuard { max_abs: f64, guard: f64 },

    #[error("singular Jacobian (pivot ratio {pivot_ratio:e})")]
    SingularJacobian { pivot_ratio: f64 },

    #[error("under-resolved bubble: {edges_across:.2} mesh edges across width {width:e}")]
    UnderResolved { width: f64, edges_across: f64 },

    #[error("expression error at column {pos}: {msg}")]
    Expression { pos: usize, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
