//! Weak adversarial network solver for PDE-constrained inverse conductivity problems.

pub mod error;
pub mod eval;
pub mod fdm;
pub mod loss;
pub mod net;
pub mod optim;
pub mod problems;
pub mod sampling;
pub mod solver;

pub use error::{Error, Result};
