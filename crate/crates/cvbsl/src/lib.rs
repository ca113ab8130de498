//! Continuous-variable measurement-based quantum computation on the bilayer
//! square lattice (BSL).
//!
//! * [`gaussian_graph`]: Gaussian pure states as complex graphs `Z`, symplectic gates.
//! * [`temporal_bsl`]: the temporal-mode optical circuit that synthesizes the BSL.
//! * [`nullifier_witness`]: nullifiers, the `R(π/4)` reweighting check and entanglement witnesses.
//! * [`homodyne_mbqc`]: homodyne measurement, wire decoupling, macronode gates, feedforward.
//! * [`wavefunction_oracle`]: grid wavefunctions that certify the non-Gaussian gate identities.
//! * [`cli`]: the experiment runner behind the `cvbsl` binary.

pub mod cli;
pub mod error;
pub mod gaussian_graph;
pub mod homodyne_mbqc;
pub mod nullifier_witness;
pub mod temporal_bsl;
pub mod wavefunction_oracle;

pub use error::{Error, Result};
pub use gaussian_graph::{GraphState, SymplecticGate};
