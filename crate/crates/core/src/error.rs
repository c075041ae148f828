use alloc::string::String;

/// Why a Markov chain failed the ergodicity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErgodicityFailure {
    /// More than one communicating class, or states that are never revisited.
    Reducible,
    /// Irreducible but with period greater than one.
    Periodic(usize),
    /// The augmented balance equations could not be solved.
    Singular,
}

impl core::fmt::Display for ErgodicityFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Reducible => f.write_str("reducible"),
            Self::Periodic(p) => write!(f, "periodic with period {p}"),
            Self::Singular => f.write_str("singular balance equations"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("chain is not ergodic: {0}")]
    NotErgodic(ErgodicityFailure),

    #[error("residual {residual:e} still above tolerance after {iterations} iterations")]
    MaxIterExceeded { iterations: usize, residual: f64 },

    #[error("projected Bellman system is singular (condition number {condition:e})")]
    SingularProjection { condition: f64 },

    #[error("greedy policy did not settle after {iterations} policy updates")]
    PolicyCycle { iterations: usize },

    #[error("optimal policy is not unique (gap {omega:e})")]
    NonUniqueOptimal { omega: f64 },

    #[error("matrix is not Hurwitz (spectral abscissa {abscissa:e})")]
    NotHurwitz { abscissa: f64 },

    #[error("noise chain mixes too slowly (second eigenvalue modulus {modulus})")]
    SlowMixing { modulus: f64 },

    #[error("step-size gain {g} does not exceed the threshold g0 = {g0}")]
    StepSizeTooSmall { g: f64, g0: f64 },

    #[error("{diverged} of {paths} sample paths diverged")]
    Diverged { diverged: usize, paths: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
