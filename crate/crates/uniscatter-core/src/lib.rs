//! Stationary scattering theory for unitary operators, instantiated on
//! one-dimensional anisotropic quantum walks.
//!
//! Everything lives on a finite lattice window `{-L, ..., L}` with a cyclic
//! shift, so the truncated walk stays exactly unitary. The modules build on
//! each other bottom-up:
//!
//! - [`op`]: states, windowed operators and the banded solver
//! - [`resolvent`]: `R(z) = (1 - z U*)^{-1}`, Poisson smoothing, Cayley transform
//! - [`walk`]: coins, shift, free and full evolutions, identification and perturbation
//! - [`free`]: symbol, bands, thresholds, fibers and the spectral transformation of the free walk
//! - [`wave`]: time-dependent and stationary wave operators
//! - [`scattering`]: scattering operator, representation formulas for `S(θ)`
//!
//! The crate is `no_std` with `alloc` when built without the default
//! features. The `parallel` feature spreads quadrature sweeps over rayon;
//! results are collected in node order either way.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dense;
pub mod error;
pub mod extrapolate;
pub mod free;
pub mod math;
pub mod op;
mod par;
pub mod resolvent;
pub mod scattering;
pub mod walk;
pub mod wave;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
pub use op::{LatticeWindow, Space, State, WindowedOperator};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
