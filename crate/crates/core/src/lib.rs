//! Quantum target detection with optimized single-mode probes.

pub mod channel;
pub mod combinatorics;
pub mod discrimination;
pub mod error;
pub mod fock;
pub mod io;
pub mod optimize;
pub mod sqp;
pub mod sweep;
pub mod validation;

pub use error::{Error, Result};
