//! Exact symbolic kernel for jet-space symmetry analysis.
//!
//! The crate verifies symmetry properties of Schrödinger-type equations whose
//! potential is itself a dependent variable: canonical expressions over an
//! exact coefficient field, prolonged vector fields, on-solution reduction,
//! determining-equation extraction, one-parameter flows, and a small
//! floating-point harness that checks transformed solutions on grids.
//!
//! Layering, bottom to top:
//! [`number`] exact scalars — [`space`] variable declarations — [`expr`]
//! canonical expressions — [`field`] prolonged vector fields — [`system`]
//! equation systems and reduction — [`invariance`] symmetry checks —
//! [`catalog`] named equations and operator families — [`flows`] finite
//! transformations — [`numeric`] grid residuals — [`report`] check reports.

use std::fmt;

pub mod catalog;
pub mod expr;
pub mod field;
pub mod flows;
pub mod invariance;
pub mod number;
pub mod numeric;
pub mod report;
pub mod space;
pub mod system;

pub use expr::{Expr, QExp};
pub use field::{Class, Dir, VectorField};
pub use number::GaussRat;
pub use space::{BaseSlot, DepConj, FuncConj, JetCoord, JetSpace};
pub use system::{Equation, EquationSystem};

/// Error type shared by the whole kernel.
#[derive(Clone, Debug, PartialEq)]
pub enum Error {
    /// Text did not conform to the expression grammar.
    Syntax { line: usize, col: usize, msg: String },
    /// Identifier not declared in the active space.
    UnknownIdent(String),
    /// `D(t; ...)` and friends: differentiation subject is an independent variable.
    DerivativeOfIndependent(String),
    /// Division by an expression that canonicalizes to zero.
    DivisionByZero,
    /// Zero raised to a negative (or otherwise undefined) power.
    ZeroToNegativePower,
    /// Power whose exponent is not a constant expression, or a numeric base
    /// raised to a non-integer exponent.
    BadExponent(String),
    /// Substitution rule set with a left side reachable from its own right side.
    SubstitutionCycle(String),
    /// On-solution reduction did not reach a fixpoint within the bound.
    FixpointNotReached(String),
    /// Vector field applied to an expression beyond its prolongation order.
    MissingProlongation(String),
    /// Operation mixing incompatible vector-field classes.
    ClassMismatch(String),
    /// Jet order beyond the declared space capacity.
    OrderExceeded(String),
    /// Numeric evaluation met a free symbol without a binding.
    Unbound(String),
    /// Numeric evaluation hit a pole (magnitude below 1e-300 in a divisor).
    Pole(String),
    /// Catalog key or parameter combination that names nothing.
    BadKey(String),
    /// Grid construction or numeric-run configuration error.
    BadGrid(String),
    /// Coefficient collection met a collection variable in a denominator or
    /// under a symbolic power.
    NotPolynomial(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Syntax { line, col, msg } => {
                write!(f, "syntax error at {}:{}: {}", line, col, msg)
            }
            Error::UnknownIdent(s) => write!(f, "unknown identifier `{}`", s),
            Error::DerivativeOfIndependent(s) => {
                write!(f, "derivative of an independent variable `{}`", s)
            }
            Error::DivisionByZero => write!(f, "division by syntactic zero"),
            Error::ZeroToNegativePower => write!(f, "zero raised to a negative power"),
            Error::BadExponent(s) => write!(f, "bad exponent: {}", s),
            Error::SubstitutionCycle(s) => write!(f, "substitution cycle: {}", s),
            Error::FixpointNotReached(s) => write!(f, "reduction fixpoint not reached: {}", s),
            Error::MissingProlongation(s) => write!(f, "missing prolonged coefficient: {}", s),
            Error::ClassMismatch(s) => write!(f, "vector-field class mismatch: {}", s),
            Error::OrderExceeded(s) => write!(f, "{}", s),
            Error::Unbound(s) => write!(f, "unbound symbol `{}`", s),
            Error::Pole(s) => write!(f, "pole during numeric evaluation: {}", s),
            Error::BadKey(s) => write!(f, "invalid catalog key: {}", s),
            Error::BadGrid(s) => write!(f, "invalid grid: {}", s),
            Error::NotPolynomial(s) => write!(f, "{}", s),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
