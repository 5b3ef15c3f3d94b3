//! Particle simulation of slow-fast McKean-Vlasov SDEs
//!
//! ```text
//! dX = b(t, X, L_X, Y) dt + σ(t, X, L_X) dW¹
//! dY = ε⁻¹ f(t, X, L_X, Y) dt + ε^{-1/2} g(t, X, L_X, Y) dW²
//! ```
//!
//! and of the averaged equation dX̄ = b̄(t, X̄, L_X̄) dt + σ dW¹, with the
//! tools to measure how fast the first approaches the second.
//!
//! - [`model`]: coefficient sets, the linear benchmark with closed forms,
//!   and a convolution-type example.
//! - [`measure`]: particle clouds and Wasserstein distances.
//! - [`noise`]: counter-addressed Gaussian increments. Results do not
//!   depend on the worker count.
//! - [`solvers`]: Euler-Maruyama for the coupled, frozen, averaged and
//!   auxiliary processes.
//! - [`poisson`]: the corrector Φ and its residual check.
//! - [`experiments`]: strong-error studies and diagnostics.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod measure;
pub mod model;
pub mod noise;
pub mod solvers;
pub mod poisson;
pub mod experiments;
