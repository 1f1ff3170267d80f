//! Fair random assignment of divisible goods and chores.
//!
//! The crate implements the simultaneous eating mechanism (classic and
//! submodular-constrained), Nash-welfare convex programs with optional
//! envy-freeness constraints, the two-stage Fisher-market allocation
//! procedure, and an audit layer that certifies the fairness and
//! efficiency guarantees of each mechanism on concrete instances.
//!
//! All combinatorial machinery is generic over a [`Scalar`] type so every
//! mechanism can run either in fast `f64` arithmetic or exactly over
//! arbitrary-precision rationals ([`Rational`]). Exact runs produce
//! bit-reproducible breakpoints and tight sets with no tolerance debates;
//! the convex solvers are inherently floating point and always run in
//! `f64`, feeding exact stages through lossless conversion.

pub mod audit;
pub mod eating;
pub mod fisher;
pub mod io;
pub mod linprog;
pub mod model;
pub mod nswopt;
pub mod polymatroid;
pub mod scalar;

pub use scalar::Scalar;

/// Fast binary floating-point scalar.
pub type Float = f64;
/// Exact arbitrary-precision rational scalar.
pub type Rational = num_rational::BigRational;

pub type FloatInstance = model::CardinalInstance<Float>;
pub type RationalInstance = model::CardinalInstance<Rational>;
pub type FloatAllocation = model::Allocation<Float>;
pub type RationalAllocation = model::Allocation<Rational>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("vector violates the feasibility polyhedron on set {set:?} (slack {slack})")]
    NotInPolyhedron { set: Vec<usize>, slack: f64 },
    #[error("eating direction is blocked: support {0:?} lies in the tight set")]
    DirectionBlocked(Vec<usize>),
    #[error("oracle inconsistency: {0}")]
    OracleInconsistent(String),
    #[error("infeasible program: {0}")]
    Infeasible(String),
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("unsupported oracle: {0}")]
    UnsupportedOracle(String),
    #[error("internal invariant violated: {0}")]
    InvariantViolation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
