use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("time scale has {0} point(s) in range; at least 2 are required")]
    EmptyScale(usize),

    #[error("bad parameter: {0}")]
    BadParam(String),

    #[error("point {0} is not in the time scale")]
    NotInScale(f64),

    #[error("degenerate request: {0}")]
    Degenerate(String),

    #[error("backward jump is not affine at t = {point}: |rho(t) - a1*t - a0| = {residual:e} exceeds {tolerance:e}")]
    HViolated {
        point: f64,
        residual: f64,
        tolerance: f64,
    },

    #[error("domain too small: {0}")]
    DomainTooSmall(String),

    #[error("point {0} is not in the function's domain")]
    NotInDomain(f64),

    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },

    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { name: String, offset: usize },

    #[error("function `{name}` takes {expected} argument(s), got {found}")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("function is not admissible: {0}")]
    NotAdmissible(String),

    #[error("variation is not admissible: {0}")]
    NotAdmissibleVariation(String),

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("singular Jacobian at iteration {0}")]
    SingularJacobian(usize),

    #[error("search space too large: {0} candidates (limit 10^7)")]
    TooLarge(f64),

    #[error("input error: {0}")]
    Input(String),
}
