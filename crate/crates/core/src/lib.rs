//! Low-depth QAC circuits: a gate-level IR, rewrite passes, nekomata builders,
//! a dense state-vector oracle and a sampler for mostly-classical circuits.

pub mod analysis;
pub mod circuit;
pub mod cli;
pub mod classical;
pub mod error;
pub mod nekomata;
pub mod random;
pub mod rng;
pub mod statevec;
pub mod transforms;
pub mod verify;

pub use circuit::{Circuit, Gate, Layer, LocalState, QubitId, C64};
pub use error::{QacError, Result};
pub use statevec::StateVector;
