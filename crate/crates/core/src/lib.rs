//! Numerical construction and verification of local stable manifolds for
//! nonlinear perturbations `v' = A(t)v + f(t,v)` of linear nonautonomous
//! equations that admit a nonuniform `(μ,ν)`-dichotomy.
//!
//! The pipeline mirrors the Lyapunov-Perron construction:
//!
//! * [`rates`]: growth rates `μ`, `ν` and their axioms;
//! * [`dichotomy`]: evolution operators and the dichotomy bounds;
//! * [`admissibility`]: the hypotheses on `(μ, ν, a, b, ε, q)`, the radius
//!   function `β`, and the largest admissible `δ`;
//! * [`manifold`]: the nested fixed point (trajectories `x_φ` inside, the
//!   graph operator `Φ` outside) on a discretised domain;
//! * [`verify`]: invariance, decay and perturbation-sensitivity checks of
//!   a computed graph.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod admissibility;
pub mod dichotomy;
pub mod error;
pub mod exec;
pub mod expr;
pub mod manifold;
pub mod norm;
pub mod perturbation;
pub mod quad;
pub mod rates;
pub mod verify;

pub use error::{Error, Result};
pub use exec::Execution;
