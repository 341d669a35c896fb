//! Strong hyperbolicity toolkit for first-order quasilinear systems on the torus.
//!
//! The crate is organized around four layers:
//!
//! * [`symbol`] — pointwise analysis of the principal symbol
//!   `A(t,x,ζ,ξ) = Aⁱ(t,x,ζ)ξᵢ`: eigendecomposition into real clustered
//!   eigenvalues, the diagonalizer `S`, the symmetrizer `P = SᵀS`, spectral
//!   projections, and sampled hyperbolicity verification.
//! * [`spectral`] — periodic grids, discrete Fourier analysis, Bessel
//!   potentials `⟨∇⟩ˢ`, Sobolev norms, and the variable-coefficient
//!   quantization `Op(SᵀS)` behind the energy functional.
//! * [`solver`] — frozen-coefficient linear evolution, Picard iteration for
//!   the quasilinear Cauchy problem, energy monitoring, and the
//!   continuation-criterion trichotomy.
//! * [`models`] — built-in systems: advection and Burgers oracles, the
//!   relativistic Euler equations, and a bulk-viscous relativistic fluid.
//!
//! The [`cli`] module provides a configuration-driven front end over all of
//! the above; the `thyp` binary is a thin wrapper around it.

pub mod cli;
pub mod models;
pub mod solver;
pub mod spectral;
pub mod symbol;
