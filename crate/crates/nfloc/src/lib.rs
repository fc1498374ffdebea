//! Wideband near-field multi-user localization toolkit.
//!
//! Simulates an uplink positioning system in which several single-antenna
//! users transmit Zadoff-Chu pilots to an anchor ULA, then runs the full
//! estimation chain:
//!
//! 1. cyclic-correlation channel estimation per user,
//! 2. LoS delay-tap detection from the averaged tap-energy profile,
//! 3. parabolic sub-tap range refinement,
//! 4. confined 2D near-field MUSIC for the coarse angle (and range),
//! 5. MLP residual correction of range and angle (two sub-networks).
//!
//! The crate also ships dataset generation, network training, RMSE
//! evaluation, and parameter sweeps behind the `nfloc` binary.

pub mod config;
pub mod error;
pub mod estimator;
pub mod features;
pub mod mat;
pub mod neural;
pub mod pilots;
pub mod pipeline;
pub mod scene;
pub mod subspace;

pub use error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
