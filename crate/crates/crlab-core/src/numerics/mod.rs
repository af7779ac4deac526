//! Scalar numerical kernels shared by every solver in this crate.
//!
//! Nothing here knows about channels or queues. The contract is small:
//! `lambert_w0` for the principal Lambert branch, `bisect`/`golden_min` for
//! one-dimensional searches, `Density1D` plus `integrate`/`inverse_ccdf` for
//! expectations against gain and sensing-statistic densities, and
//! `MonotoneCubic` for shape-preserving interpolation of cached curves.
//!
//! Densities may have unbounded upper support; integrals truncate where the
//! residual tail mass drops below `QuadratureSpec::tail_mass` (default
//! 1e-12), so integrands must be evaluable anywhere below that cutoff.

mod density;
mod interp;
mod lambert;
mod quadrature;
mod roots;
mod special;

pub use density::Density1D;
pub use interp::MonotoneCubic;
pub use lambert::lambert_w0;
pub use quadrature::{integrate, inverse_ccdf, QuadratureSpec};
pub(crate) use quadrature::composite_gk15_vec;
pub use roots::{bisect, golden_min};
pub use special::{ln_bessel_i, ln_binomial, ln_gamma};

use std::fmt;

/// Failure modes for the kernels in this module.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Argument outside the mathematical domain of the function.
    Domain(String),
    /// Root bracketing failed: no sign change over `[lo, hi]`.
    NoBracket { lo: f64, hi: f64 },
    /// A function evaluation produced NaN or an unexpected infinity.
    NonFinite { x: f64 },
    /// Requested tolerance not reached within the subdivision/iteration cap.
    ToleranceNotMet { achieved: f64, requested: f64 },
    /// Structurally invalid input (empty grid, non-monotone abscissae, ...).
    BadInput(String),
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::Domain(msg) => write!(f, "domain error: {msg}"),
            NumericsError::NoBracket { lo, hi } => {
                write!(f, "no sign change over [{lo}, {hi}]")
            }
            NumericsError::NonFinite { x } => {
                write!(f, "non-finite evaluation at x = {x}")
            }
            NumericsError::ToleranceNotMet {
                achieved,
                requested,
            } => write!(
                f,
                "tolerance not met: achieved {achieved:e}, requested {requested:e}"
            ),
            NumericsError::BadInput(msg) => write!(f, "bad input: {msg}"),
        }
    }
}

impl std::error::Error for NumericsError {}
