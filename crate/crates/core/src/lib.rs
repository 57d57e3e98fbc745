//! Lattice recurrent units and baselines for character-level language
//! modeling: cell step functions with exact gradients, lattice assembly,
//! truncated BPTT, corpus handling, and an Adam training harness.

pub mod cells;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod lattice;
pub mod numkit;
pub mod trainer;

pub use cells::{CellKind, CellParams, CellState};
pub use corpus::{PreparedCorpus, SplitCorpus, Vocab};
pub use error::{Error, Result};
pub use lattice::{CarriedState, NetworkConfig, NetworkParams, Readout};
pub use numkit::{Mat, Rng};
