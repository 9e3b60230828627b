//! Far-field two-speaker separation with DOA-driven LCMV beamforming.
//!
//! The pipeline is STFT -> steering -> LCMV beamforming -> optional
//! ratio post-mask -> iSTFT. Source directions come from an oracle,
//! an SRP-PHAT scan, or a loss-driven fit that minimizes a spectral
//! distance between the separated and the target signals.

pub mod beamforming;
pub mod cli;
pub mod doa;
pub mod error;
pub mod geometry;
mod linalg;
pub mod losses;
pub mod metrics;
pub mod postmask;
pub mod roomsim;
pub mod wav;
pub mod wola;

pub use error::{Error, Result};
