//! Image-to-volume networks built on `cloudvol-tensor`: the residual U-Net
//! baseline, the Swin masked autoencoder (optionally with metadata
//! embeddings) and the SwinConv volume decoder with per-variable heads.
//!
//! All models are generic over the element type, so the same code runs in
//! `f32` for training and `f64` for gradient checks.

mod error;
pub mod layers;
pub mod model;
pub mod swin;
pub mod unet;

pub use error::{ModelError, Result};
pub use model::{count_parameters, Architecture, SwinConvModel, SwinMae, VolumeModel, VolumeSpec};
pub use swin::{MetadataVector, SwinConfig, SwinConvConfig, TokenMask, METADATA_DIM};
pub use unet::{UNet, UNetConfig};
