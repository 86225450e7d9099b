//! Numerical laboratory for bistable two-species competition with
//! advection in a periodic habitat.

// `!(x > 0.0)` is how NaN gets rejected; index loops mirror the stencils.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod cooperative_transform;
pub mod discretization;
pub mod error;
pub mod front_solver;
pub mod subsuper_verifier;
pub mod periodic_coeffs;
pub mod spectral;
pub mod steady_states;
pub mod wave_speeds;

pub use error::{Error, Result};

/// The guide in `book/`, compiled so its examples run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/coefficients.md")]
    mod coefficients {}
    #[doc = include_str!("../../../book/src/eigenvalues.md")]
    mod eigenvalues {}
    #[doc = include_str!("../../../book/src/steady_states.md")]
    mod steady_states {}
    #[doc = include_str!("../../../book/src/speeds.md")]
    mod speeds {}
    #[doc = include_str!("../../../book/src/fronts.md")]
    mod fronts {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
