//! Numerical laboratory for magnetic Schrödinger operators on finite lattices.
//!
//! The crate discretizes `H = ½(-i∇ - A)² + V` on a finite grid with
//! Dirichlet walls and magnetic Peierls phases, and provides the machinery
//! to measure resolvent and operator-kernel decay in Schatten norms:
//!
//! - [`lattice`] — grid domains, Peierls Hamiltonians, exact spectral calculus
//! - [`schatten`] — Schatten-p and mixed L^p→L^q norms, unit-cube block extraction
//! - [`ctbounds`] — Combes-Thomas constant machinery and decay experiments
//! - [`hscalc`] — Helffer-Sjöstrand functional calculus via quasi-analytic extension
//! - [`fk`] — Feynman-Kac-Itô Monte Carlo semigroups and the diamagnetic family
//! - [`cli`] — config-driven experiment runner with CSV/SVG artifacts

pub mod cli;
pub mod ctbounds;
pub mod fk;
pub mod hscalc;
pub mod lattice;
pub mod schatten;

pub use num_complex::Complex64;

/// Dense complex matrix type used throughout.
pub type CMatrix = nalgebra::DMatrix<Complex64>;
/// Dense complex vector type used throughout.
pub type CVector = nalgebra::DVector<Complex64>;
