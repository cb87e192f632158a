//! Simulation and design library for a hybrid qubit built from a transmon
//! embedded in a Jaynes-Cummings ladder with electron-spin ensembles.
//!
//! The crate covers parameter estimation from hardware numbers, truncated
//! Hilbert-space construction, spectra of the excitation-conserving blocks,
//! unitary and dissipative time evolution, effective dispersive models, and
//! two-qubit gate schedules on spin-ensemble memories.

pub mod constants;
pub mod dynamics;
pub mod cli;
pub mod effective;
pub mod gates;
pub mod hamiltonian;
pub mod hilbert;
pub mod linalg;
pub mod operator;
pub mod error;
pub mod params;
pub mod spectra;

pub use error::{Error, Result};
