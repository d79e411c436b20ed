//! Simulation, dense 3D localization and phase-mask co-design for
//! single-molecule localization microscopy.

pub mod codesign;
pub mod decoder;
pub mod error;
pub mod grid3d;
pub mod io;
pub mod metrics;
pub mod mp;
pub mod optics;
pub mod scenes;

pub use error::{Error, Result};
