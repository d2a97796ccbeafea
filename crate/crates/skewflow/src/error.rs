use thiserror::Error;

/// Errors shared across the library.
///
/// Soft diagnostics (non-convergence of a pullback limit, backward blowup,
/// quadrature-coarseness warnings) are *not* errors: they are carried as flags
/// on the result types so callers still receive the partial data.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// A precondition on user input failed (dimensions, ranges, emptiness).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// The frequency vector admits an integer relation k0 + k·ρ ≈ 0, so the
    /// rotation is not minimal and the construction that required minimality
    /// cannot proceed.
    #[error("rotation is not minimal: relation {k0} + {k:?}·ρ has residual {residual:.3e}")]
    NotMinimal { k0: i64, k: Vec<i64>, residual: f64 },

    /// The tube-radius search could not meet the mass budget for a bump term.
    #[error(
        "bump term {term}: tube mass {achieved:.6e} cannot meet budget {budget:.6e} \
         after {iterations} bisections"
    )]
    MassBudget {
        term: usize,
        achieved: f64,
        budget: f64,
        iterations: u32,
    },

    /// The adaptive integrator needed a step below the hard minimum.
    /// `t` and `x` are the last accepted state.
    #[error("step size underflow at t = {t:.6} (x = {x:.6e}): step below {min_step:.3e}")]
    StepUnderflow { t: f64, x: f64, min_step: f64 },

    /// A computed quantity left the representable range or turned NaN where
    /// the contract promises a finite value.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// A structural invariant that the algorithms rely on was violated at
    /// runtime (e.g. pullback monotonicity beyond solver slack).
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
