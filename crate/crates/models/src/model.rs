//! Complete models as used by the training loops.

use cloudvol_tensor::{ParamStore, Real, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::swin::{MaeDecoder, MetadataVector, SwinConfig, SwinConvConfig, SwinConvDecoder, SwinEncoder, TokenMask};
use crate::unet::{UNet, UNetConfig};
use crate::Result;

/// Model family selectable from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Unet,
    /// Swin autoencoder without metadata embeddings.
    Swinmae,
    /// Swin autoencoder with metadata embeddings.
    Swinsatmae,
}

impl Architecture {
    pub fn uses_metadata(self) -> bool {
        self == Self::Swinsatmae
    }

    pub fn is_swin(self) -> bool {
        self != Self::Unet
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Unet => "unet",
            Self::Swinmae => "swinmae",
            Self::Swinsatmae => "swinsatmae",
        }
    }
}

/// Exact number of trainable scalars.
pub fn count_parameters<T: Real>(store: &ParamStore<T>) -> usize {
    store.count()
}

/// Encoder plus image decoder, the pre-training model.
#[derive(Clone, Debug)]
pub struct SwinMae {
    pub encoder: SwinEncoder,
    pub decoder: MaeDecoder,
}

impl SwinMae {
    pub fn build<T: Real, R: Rng + ?Sized>(config: SwinConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        let encoder = SwinEncoder::build(config, store, rng)?;
        let decoder = MaeDecoder::build(&encoder.config, store, rng);
        Ok(Self { encoder, decoder })
    }

    /// Reconstruction `[B, C_in, S, S]` of a masked input.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        meta: Option<&[MetadataVector]>,
        masks: &[TokenMask],
    ) -> Result<Var> {
        let enc = self.encoder.forward(tape, store, img, meta, Some(masks))?;
        self.decoder.forward(tape, store, &enc)
    }
}

/// Encoder plus volume decoder and heads, the fine-tuning model.
#[derive(Clone, Debug)]
pub struct SwinConvModel {
    pub encoder: SwinEncoder,
    pub decoder: SwinConvDecoder,
}

impl SwinConvModel {
    pub fn build<T: Real, R: Rng + ?Sized>(
        encoder: SwinConfig,
        decoder: SwinConvConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        let encoder = SwinEncoder::build(encoder, store, rng)?;
        let decoder = SwinConvDecoder::build(decoder, &encoder.config, store, rng)?;
        Ok(Self { encoder, decoder })
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        meta: Option<&[MetadataVector]>,
    ) -> Result<Var> {
        let enc = self.encoder.forward(tape, store, img, meta, None)?;
        self.decoder.forward(tape, store, &enc)
    }
}

/// Serializable description of an image-to-volume model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum VolumeSpec {
    Unet(UNetConfig),
    Swin {
        encoder: SwinConfig,
        decoder: SwinConvConfig,
    },
}

impl VolumeSpec {
    pub fn desk(arch: Architecture, n_vars: usize) -> Self {
        match arch {
            Architecture::Unet => Self::Unet(UNetConfig::desk(n_vars)),
            _ => Self::Swin {
                encoder: SwinConfig::desk(arch.uses_metadata()),
                decoder: SwinConvConfig::desk(n_vars),
            },
        }
    }

    pub fn full(arch: Architecture, n_vars: usize) -> Self {
        match arch {
            Architecture::Unet => Self::Unet(UNetConfig::full(n_vars)),
            _ => Self::Swin {
                encoder: SwinConfig::full(arch.uses_metadata()),
                decoder: SwinConvConfig::full(n_vars),
            },
        }
    }

    pub fn n_vars(&self) -> usize {
        match self {
            Self::Unet(c) => c.n_vars,
            Self::Swin { decoder, .. } => decoder.n_vars,
        }
    }

    pub fn image_size(&self) -> Option<usize> {
        match self {
            Self::Unet(_) => None,
            Self::Swin { encoder, .. } => Some(encoder.image_size),
        }
    }

    pub fn uses_metadata(&self) -> bool {
        matches!(self, Self::Swin { encoder, .. } if encoder.metadata)
    }

    pub fn build<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) -> Result<VolumeModel> {
        Ok(match self {
            Self::Unet(c) => VolumeModel::Unet(UNet::build(c.clone(), store, rng)?),
            Self::Swin { encoder, decoder } => {
                VolumeModel::Swin(SwinConvModel::build(encoder.clone(), decoder.clone(), store, rng)?)
            }
        })
    }
}

#[derive(Clone, Debug)]
pub enum VolumeModel {
    Unet(UNet),
    Swin(SwinConvModel),
}

impl VolumeModel {
    /// `[B, C_in, S, S]` -> `[B, V * levels, S, S]`. Metadata is ignored by
    /// models without a metadata embedding.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        meta: Option<&[MetadataVector]>,
    ) -> Result<Var> {
        match self {
            Self::Unet(m) => m.forward(tape, store, img),
            Self::Swin(m) => m.forward(tape, store, img, meta),
        }
    }
}
