//! Pedestrian dead reckoning with an invariant EKF on SE2(3) and an
//! error-state EKF baseline, driven by zero-velocity updates.

pub mod detector;
pub mod ekf;
pub mod error;
pub mod inekf;
pub mod io;
pub mod lie;
pub mod linalg;
pub mod metrics;
pub mod runner;
pub mod sim;
pub mod state;

pub use error::{Error, Result};
