//! High-resolution image inpainting for constrained devices.
//!
//! A small reparametrizable CNN fills the holes of a downsampled image, a
//! masked patch self-attention pass replaces corrupted patches with mixtures
//! of known ones, and the resulting attention map is reused at full
//! resolution to transfer high-frequency detail from the known regions.

pub mod attention;
pub mod bench;
pub mod coarse;
pub mod error;
pub mod masks;
pub mod metrics;
pub mod patch;
pub mod pipeline;
pub mod pnm;
pub mod spectral;
pub mod tensor;
pub mod upscale;
pub mod weights;

pub use error::{Error, Result};
pub use tensor::Tensor;
