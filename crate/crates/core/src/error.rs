use thiserror::Error;

/// Coarse classification used by front-ends to map failures onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad user input: unknown names, malformed grids, out-of-range numbers.
    Config,
    /// The computation itself failed (non-finite values, overflow, unbounded infimum).
    Numerical,
    /// A structural precondition of the requested operation does not hold.
    Precondition,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown model `{name}`; available: {}", available.join(", "))]
    UnknownModel {
        name: String,
        available: Vec<&'static str>,
    },

    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },

    #[error("non-finite Y at step {step}")]
    NonFiniteValue { step: usize },

    #[error("singular control {value} on path {path} at step {step} is outside [0, {bound}]")]
    ControlOutOfBounds {
        path: usize,
        step: usize,
        value: f64,
        bound: f64,
    },

    #[error(
        "Girsanov exponent {exponent:.1} overflows on path {path}; reduce bound_mu/bound_nu or refine the grid"
    )]
    WeightOverflow { path: usize, exponent: f64 },

    #[error("possibly unbounded face-lift: objective still improving at l_max in component {component}")]
    UnboundedFacelift { component: usize },

    #[error("explicit scheme unstable: ratio {ratio:.4} exceeds {limit}")]
    Stability { ratio: f64, limit: f64 },

    #[error("scenario tree has {size} nodes, above the limit {limit}")]
    TreeTooLarge { size: u128, limit: u128 },

    #[error("unsupported terminal for closed form: {0}")]
    UnsupportedTerminal(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidInput(_) | Error::UnknownModel { .. } => ErrorKind::Config,
            Error::NonFiniteState { .. }
            | Error::NonFiniteValue { .. }
            | Error::WeightOverflow { .. }
            | Error::UnboundedFacelift { .. }
            | Error::Stability { .. } => ErrorKind::Numerical,
            Error::ControlOutOfBounds { .. }
            | Error::TreeTooLarge { .. }
            | Error::UnsupportedTerminal(_)
            | Error::Precondition(_) => ErrorKind::Precondition,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
