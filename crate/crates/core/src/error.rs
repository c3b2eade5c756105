use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("expression error: {0}")]
    Expr(String),

    #[error("unknown rate family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("time ordering violated: t = {t} < s = {s}")]
    TimeOrder { t: f64, s: f64 },

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("improper integral diverges: {0}")]
    Divergent(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("hypotheses not certified: {0}")]
    NotAdmissible(String),

    #[error("tail bound {bound:e} above tolerance {tol:e} at T_cut = {t_cut}")]
    TailBound { bound: f64, tol: f64, t_cut: f64 },

    #[error("inner trajectory from s = {s} violates the decay bound at t = {t} (ratio {ratio})")]
    DecayViolation { s: f64, t: f64, ratio: f64 },

    #[error("Picard iteration did not reach tolerance after {iters} iterations (last change {last:e})")]
    PicardStalled { iters: usize, last: f64 },

    #[error("solution blew up at t = {time}")]
    BlowUp { time: f64 },

    #[error("iterate {iter} violates the Lipschitz bound: ratio {ratio} at s = {s}")]
    LipschitzViolation { iter: usize, ratio: f64, s: f64 },

    #[error("outer iteration is not contracting: ratio {ratio} exceeds bound {bound} at iteration {iter}")]
    NonContraction { iter: usize, ratio: f64, bound: f64 },

    #[error("no convergence after {iters} outer iterations (last distance {last:e})")]
    MaxIterations { iters: usize, last: f64 },
}

impl Error {
    pub(crate) fn param(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name: name.to_string(),
            reason: reason.into(),
        }
    }
}
