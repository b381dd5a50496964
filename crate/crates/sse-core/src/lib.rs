//! Simulation and verification toolkit for the stochastic Schrödinger
//! equations of a laser-driven two-level atom.
//!
//! The crate has three legs:
//!
//! * numeric models ([`lindblad`]) and the master-equation oracle,
//! * trajectory samplers for photon counting ([`davies`]) and homodyne
//!   detection ([`homodyne`]), with statistical verification in [`stats`],
//! * a noncommutative symbolic engine ([`ito`]) that re-derives the filter
//!   equations from the quantum Itô table.

pub mod algebra;
pub mod davies;
pub mod exec;
pub mod homodyne;
pub mod ito;
pub mod lindblad;
pub mod record;
pub mod stats;

pub use algebra::{c, AlgebraError, C64, CMatrix, DensityMatrix, Superoperator};
