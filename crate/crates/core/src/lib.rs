//! Style separation and synthesis GAN.
//!
//! An encoder maps an object photograph to a latent tensor whose first half
//! carries content (shape, pose) and whose second half carries style (color,
//! texture). A generator decodes any recombination of halves back to an
//! image. Training is adversarial (Wasserstein critic with weight clipping)
//! plus perceptual, reconstruction and total-variation terms.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod extractor;
pub mod latent;
pub mod losses;
pub mod networks;
pub mod nn;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Image;
