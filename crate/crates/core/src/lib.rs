//! Effective (coarse-grained) dynamics for non-reversible SDEs.
//!
//! Given `dX = F(X) dt + sqrt(2) Sigma(X) dW` with invariant measure
//! `mu = Z^-1 exp(-V)` and an affine coarse-graining map xi, the crate
//! builds the closed effective dynamics
//!
//! ```text
//! dZ = b(Z) dt + sqrt(2) sigma(Z) dB,
//! b(z)       = E_mu[ F^1      | xi = z ],
//! sigma^2(z) = E_mu[ |Sigma^1|^2 | xi = z ],
//! ```
//!
//! simulates xi(X_t) and Z_t against the same driving Brownian motion (plain
//! and random-clock couplings), and computes the constants and explicit
//! formulas that bound `E sup_{t<=T} |xi(X_t) - Z_t|^2`: level-set Poincare
//! constants, the coupling constants kappa^2 and lambda^2, L^2(mu)
//! coefficient gaps, and weighted Poisson solves on level sets.

pub mod bridge;
pub mod coupled;
pub mod diagnostics;
pub mod effective;
pub mod error;
pub mod fields;
pub mod models;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
