//! Chiral state transfer around exceptional points in a two-level system
//! with loss and dephasing.
//!
//! The crate integrates the Lindblad dynamics of the reduced model (and the
//! three-level model it is derived from), projects trajectories onto the
//! spectra of the effective Hamiltonian and of the Liouvillian, and runs the
//! chirality sweeps over encircling time and velocity.

pub mod cli;
pub mod integrate;
pub mod liouville;
pub mod model;
pub mod observables;
pub mod paths;
pub mod smallmat;
pub mod sweeps;

pub use num_complex::Complex64 as C64;
