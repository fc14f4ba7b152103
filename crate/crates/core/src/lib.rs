//! Discrete physics-informed neural networks for evolutionary PDEs.
//!
//! Time is advanced with a Runge–Kutta differencing scheme; at each
//! timestamp a network is fitted in space to the scheme's residual,
//! warm-started from the network of the previous timestamp.

pub mod autodiff;
pub mod error;
pub mod exec;
pub mod metrics;
pub mod network;
pub mod oracle;
pub mod pdes;
pub mod presets;
pub mod report;
pub mod schemes;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
