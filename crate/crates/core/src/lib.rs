//! Simulation and verification toolkit for quantum Kalman filtering and
//! PID feedback of a damped cavity mode under homodyne detection.

pub mod error;
pub mod classical;
pub mod cli;
pub mod control;
pub mod fock;
pub mod lti;
pub mod mc;
pub mod qkf;
pub mod trajectory;

pub use error::{Error, Result};
