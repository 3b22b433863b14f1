use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A scenario, layout, power vector, or matching violated a structural invariant.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two users passed to a SINR evaluation are not served by the same waveguide.
    #[error("users {decoder} and {signal} are not co-clustered on waveguide {waveguide}")]
    NotCoClustered {
        decoder: usize,
        signal: usize,
        waveguide: usize,
    },

    /// The scheduling quota cannot accommodate all users.
    #[error("quota infeasible: {users} users exceed {waveguides} waveguides x quota {quota}")]
    QuotaInfeasible {
        users: usize,
        waveguides: usize,
        quota: usize,
    },

    /// A convex subproblem has no feasible point.
    #[error("subproblem infeasible (max constraint violation {max_violation:.3e})")]
    Infeasible { max_violation: f64 },

    /// An iterative solver hit its iteration cap before reaching tolerance.
    #[error("solver reached iteration cap {cap} (residual {residual:.3e})")]
    MaxIterations { cap: usize, residual: f64 },

    /// The swap-matching loop exceeded its safety cap.
    #[error("swap matching exceeded {cap} accepted swaps")]
    SwapCapExceeded { cap: usize },

    /// An exhaustive enumeration was refused because the instance is too large.
    #[error("exhaustive search refused: {assignments} assignments for M={users}")]
    TooLarge { assignments: u128, users: usize },

    /// Config file could not be read or parsed.
    #[error("config error: {0}")]
    Config(String),

    /// Filesystem error while emitting results.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
