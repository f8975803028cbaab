//! Ultraweak DPG solver for coupled time-harmonic Maxwell systems modelling
//! Raman gain in a step-index fiber amplifier.

pub mod basis;
pub mod config;
pub mod dofmap;
pub mod dpg;
pub mod error;
pub mod maxwell;
pub mod mesh;
pub mod oracle;
pub mod pml;
pub mod postprocess;
pub mod raman;
pub mod studies;
pub mod sumfact;

pub use error::{Error, Result};
