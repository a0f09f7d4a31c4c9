//! Construction, weak simulation and statistical verification of
//! matchgate circuits.
//!
//! The crate builds classically simulable verification circuits out of
//! universal ones (matchgate encoding plus magic-state gadget
//! replacement), simulates their randomized-compiled noisy execution
//! either densely or through fermionic covariance matrices, and decides
//! with two-sample tests whether two runs produce the same output
//! distribution.
//!
//! Conventions used throughout:
//! - qubits are 0-based; qubit 0 is the most significant bit of a basis
//!   index and the first character of a bitstring;
//! - qubit q owns Majorana modes 2q and 2q+1 (Jordan-Wigner with a
//!   Z-string prefix, X for even modes, Y for odd modes);
//! - mode rotations R satisfy `U c_j U^dag = sum_i R_ij c_i`, so that
//!   R(UV) = R(U) R(V) and covariance matrices map as
//!   `Gamma -> R Gamma R^T`.

pub mod circuit;
pub mod dense;
pub mod encoding;
pub mod error;
pub mod experiments;
pub mod gadget;
pub mod gaussian;
pub mod matchgate;
pub mod noise;
pub mod oracle;
pub mod par;
pub mod pauli;
pub mod postproc;
pub mod stats;

pub use error::{Error, Result};
