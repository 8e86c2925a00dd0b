//! Riemannian adaptive-regularization optimization on the Stiefel and
//! Grassmannian manifolds.
//!
//! The crate provides, bottom to top:
//!
//! - [`manifold`]: points, tangent vectors, projections, metric, random
//!   generation, and reference geodesics for St(n,p) and Gr(n,p);
//! - [`retraction`]: high-order projected-polynomial retractions with
//!   empirical order estimation against the reference geodesics;
//! - [`oracle`]: finite-difference derivative oracles of the pullback
//!   `f ∘ R` at the zero tangent (value, gradient, Hessian action,
//!   third-order tensor action), plus the Brockett trace objective;
//! - [`model`]: the quartically regularized third-order polynomial and its
//!   calculus, with a Lanczos smallest-eigenvalue estimator;
//! - [`krylov`]: the symmetric tensor Krylov iteration and the hybrid
//!   subspace minimization framework for that polynomial;
//! - [`solvers`]: pluggable Euclidean inner solvers (Armijo gradient
//!   descent and a damped Newton method);
//! - [`driver`]: the third-order adaptive-regularization outer loop.
//!
//! Everything numeric is generic over the scalar type through
//! [`num::Real`]; the aliases below fix `f64`, which is what the benchmark
//! binary uses.

pub mod error;
pub mod num;

pub(crate) mod linalg;

pub mod krylov;
pub mod manifold;
pub mod model;
pub mod oracle;
pub mod retraction;
pub mod solvers;

pub use error::{RarError, Result};

/// `f64` instantiations of the core types.
pub type Point = manifold::ManifoldPoint<f64>;
pub type Tangent = manifold::TangentVector<f64>;
