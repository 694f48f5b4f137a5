//! Matrix-free light transport camera models and multi-camera volume
//! reconstruction.

pub mod camera;
pub mod config;
pub mod error;
pub mod io;
pub mod kernel;
pub mod lightfield;
pub mod metrics;
pub mod optics;
pub mod phantom;
pub mod recon;
pub mod rotation;
pub mod selftest;
pub mod system;
pub mod transport;
pub mod volume;

pub use error::{Error, Result};
