//! Numerical flattening of CR vector-bundle connections over the Heisenberg
//! group and nearby graph hypersurfaces.
//!
//! A connection is given by its (0,1) part `ω = Σ Γ_ᾱ dz̄^α` on a masked grid
//! in graph coordinates `(Re z', Im z', x^n)`. The [`engine`] drives a
//! rapid-convergence iteration `B_{j+1} = -P ω_j`, `A_{j+1} = I + B_{j+1}` on a
//! shrinking family of Heisenberg balls until the transformed connection
//! vanishes, producing a frame `G_∞` with `∂̄_M G + G ω_0 = 0`.
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to plain iterators otherwise; reductions use a
//! fixed chunking so results do not depend on the thread count.

pub mod calculus;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod normalization;
pub mod norms;
pub mod par;
pub mod poly;
pub mod problem;
pub mod series;
pub mod solver;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Shorthand for the complex scalar used everywhere.
pub type C64 = Complex64;

/// The imaginary unit.
pub const I: C64 = C64::new(0.0, 1.0);
