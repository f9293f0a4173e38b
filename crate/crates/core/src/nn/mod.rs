//! Minimal CPU neural-network toolkit: layers with explicit backward passes and Adam.

pub mod adam;
pub mod layers;
pub mod ops;
pub mod sequential;

pub use adam::Adam;
pub use layers::{BatchNorm2d, Cache, Conv2d, ConvTranspose2d, Linear, Mode, Param};
pub use ops::ConvGeom;
pub use sequential::{Layer, Sequential, Tape};

#[cfg(test)]
mod gradcheck;
