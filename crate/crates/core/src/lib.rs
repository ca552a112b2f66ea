//! Remote restoring of sender states transferred along a homogeneous XX spin
//! chain, using piecewise-constant local magnetic fields on the extended
//! receiver as the control.

pub mod chain;
pub mod config;
pub mod error;
pub mod metrics;
pub mod oracle;
pub mod output;
pub mod plot;
pub mod propagator;
pub mod restore;
pub mod solver;

pub use error::{Error, Result};
