use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint {joint} = {value_deg:.4} deg outside [{min_deg:.1}, {max_deg:.1}] deg")]
    LimitViolation {
        joint: usize,
        value_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },

    #[error("no kinematic solution: {0}")]
    NoSolution(String),

    #[error("newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("{what}: analytic and finite-difference derivatives disagree (rel. err {rel_err:.3e})")]
    DerivativeInconsistency { what: &'static str, rel_err: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("ray (theta {theta:.4}, phi {phi:.4}) found no boundary within {max_range} mm")]
    NoHit { theta: f64, phi: f64, max_range: f64 },

    #[error("inverse kinematics failed for direction (theta {theta:.4}, phi {phi:.4}): {source}")]
    IkFailure {
        theta: f64,
        phi: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("jacobian is singular")]
    SingularJacobian,

    #[error("implicit surface gradient vanishes")]
    ZeroGradient,

    #[error("configuration lies on the forbidden boundary")]
    AtBoundary,

    #[error("accepted {accepted} of {requested} free samples within {attempts} attempts")]
    RejectionBudgetExceeded {
        requested: usize,
        accepted: usize,
        attempts: usize,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("goal is unreachable in the roadmap")]
    Unreachable,

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("degenerate curve: {0}")]
    DegenerateCurve(&'static str),

    #[error("all {0} calibration triangles failed inverse kinematics")]
    CalibrationFailed(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
