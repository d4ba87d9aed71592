//! Numerical toolkit for small-time local controllability of the bilinear
//! Schrödinger equation on (0,1) with Neumann boundary conditions:
//!
//! ```text
//! i ∂_t ψ = −∂_x² ψ − u(t) μ(x) ψ,   ∂_x ψ(t,0) = ∂_x ψ(t,1) = 0.
//! ```
//!
//! Modules, bottom-up:
//! - [`spectral`]: eigen-system, potential coefficients, c_j, drift coefficients, classifier;
//! - [`signals`]: piecewise-constant controls, primitives, exact Fourier transforms, Sobolev norms;
//! - [`kernels`]: the convolution kernel K and its frequency-domain counterpart Θ;
//! - [`quadform`]: the quadratic forms Q, Q_k in time and frequency, principal values, diagnostics;
//! - [`simulator`]: Galerkin time stepping, first/second-order expansions, drift certificates;
//! - [`synthesis`]: tangent controls, moment problems and the full steering loop;
//! - [`cli`]: batch command-line front end.

pub mod cli;
pub mod error;
pub mod kernels;
pub mod numerics;
pub mod quadform;
pub mod signals;
pub mod simulator;
pub mod spectral;
pub mod synthesis;

pub use error::{Result, StlcError};
pub use num_complex::Complex64 as C64;
