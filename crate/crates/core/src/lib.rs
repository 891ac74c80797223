//! Simulation and reconstruction toolkit for unbalanced double
//! homodyne detection of Gaussian states.

pub mod config;
pub mod dhd;
pub mod error;
pub mod io;
pub mod gaussian;
pub mod pulses;
pub mod recon;
pub mod run;

pub use error::{Error, Result};
