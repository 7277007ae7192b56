//! Hierarchical shifted-window transformer: encoder, masking, metadata
//! embedding and the two decoders (image reconstruction and volume).

mod attention;
mod encoder;
mod mae;
mod mask;
mod metadata;
mod swinconv;

pub use attention::{relative_position_index, shift_attention_mask, SwinBlock, WindowAttention};
pub use encoder::{EncoderOutput, PatchExpand, PatchMerging, SwinEncoder, ENCODER_PREFIX};
pub use mae::{MaeDecoder, MAE_PREFIX};
pub use mask::{select_units, TokenMask};
pub use metadata::{MetadataVector, METADATA_DIM};
pub use swinconv::{SwinConvConfig, SwinConvDecoder};

use cloudvol_core::channels::N_CHANNELS;
use cloudvol_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwinConfig {
    pub image_size: usize,
    pub in_channels: usize,
    /// Token side in pixels.
    pub token_px: usize,
    /// Attention window side in tokens.
    pub window_tokens: usize,
    /// Mask unit side in tokens.
    pub mask_unit_tokens: usize,
    pub mask_ratio: f64,
    pub depths: Vec<usize>,
    pub dims: Vec<usize>,
    pub heads: Vec<usize>,
    pub mlp_ratio: usize,
    /// Adds the embedded [`MetadataVector`] to every token.
    pub metadata: bool,
}

impl SwinConfig {
    /// 256 px input, four stages.
    pub fn full(metadata: bool) -> Self {
        Self {
            image_size: 256,
            in_channels: N_CHANNELS,
            token_px: 2,
            window_tokens: 16,
            mask_unit_tokens: 2,
            mask_ratio: 0.5,
            depths: vec![2, 2, 6, 2],
            dims: vec![96, 192, 384, 768],
            heads: vec![3, 6, 12, 24],
            mlp_ratio: 4,
            metadata,
        }
    }

    /// 64 px input, two stages; same token, window and mask-unit sizes.
    pub fn desk(metadata: bool) -> Self {
        Self {
            image_size: 64,
            depths: vec![2, 2],
            dims: vec![32, 64],
            heads: vec![2, 4],
            ..Self::full(metadata)
        }
    }

    pub fn n_stages(&self) -> usize {
        self.depths.len()
    }

    /// Token grid side at stage 0.
    pub fn grid(&self) -> usize {
        self.image_size / self.token_px
    }

    pub fn stage_grid(&self, stage: usize) -> usize {
        self.grid() >> stage
    }

    /// Window side used at `stage`; shrinks to the grid when the grid is smaller.
    pub fn stage_window(&self, stage: usize) -> usize {
        self.window_tokens.min(self.stage_grid(stage))
    }

    /// Shift of the odd blocks of `stage`; zero when one window covers the grid.
    pub fn stage_shift(&self, stage: usize) -> usize {
        if self.stage_grid(stage) > self.window_tokens {
            self.window_tokens / 2
        } else {
            0
        }
    }

    pub fn mask_units(&self) -> usize {
        let u = self.grid() / self.mask_unit_tokens;
        u * u
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.depths.len();
        if n == 0 || self.dims.len() != n || self.heads.len() != n {
            return config_err("depths, dims and heads must be non-empty and equally long");
        }
        if self.in_channels == 0 || self.token_px == 0 || self.window_tokens == 0 || self.mask_unit_tokens == 0 {
            return config_err("sizes must be positive");
        }
        if self.image_size == 0 || self.image_size % self.token_px != 0 {
            return config_err(format!(
                "image side {} not divisible by token size {}",
                self.image_size, self.token_px
            ));
        }
        let grid = self.grid();
        if grid % self.mask_unit_tokens != 0 {
            return config_err(format!(
                "token grid {grid} not divisible by mask unit {}",
                self.mask_unit_tokens
            ));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return config_err(format!("mask ratio {} outside [0, 1)", self.mask_ratio));
        }
        if self.dims[0] % 4 != 0 {
            return config_err(format!("embed dim {} must be divisible by 4", self.dims[0]));
        }
        if self.mlp_ratio == 0 {
            return config_err("mlp ratio must be positive");
        }
        for s in 0..n {
            let g = self.stage_grid(s);
            if g == 0 || (s + 1 < n && g % 2 != 0) || (g << s) != grid {
                return config_err(format!("token grid {grid} cannot be merged {s} times"));
            }
            if g % self.stage_window(s) != 0 {
                return config_err(format!(
                    "stage {s} grid {g} not divisible by window {}",
                    self.window_tokens
                ));
            }
            if self.depths[s] == 0 || self.heads[s] == 0 || self.dims[s] % self.heads[s] != 0 {
                return config_err(format!(
                    "stage {s}: dim {} not divisible by {} heads",
                    self.dims[s], self.heads[s]
                ));
            }
            if s > 0 && self.dims[s] != 2 * self.dims[s - 1] {
                return config_err("each patch merge must double the embed dim");
            }
        }
        Ok(())
    }
}

/// Fixed 2-d sine-cosine position encoding, `[grid, grid, dim]`.
///
/// The first half of the channels encodes the row, the second the column.
pub fn position_encoding<T: Real>(grid: usize, dim: usize) -> Tensor<T> {
    let q = dim / 4;
    let mut out = Vec::with_capacity(grid * grid * dim);
    for i in 0..grid {
        for j in 0..grid {
            for pos in [i, j] {
                for k in 0..q {
                    let omega = 1.0 / 10000f64.powf(k as f64 / q as f64);
                    out.push(T::of((pos as f64 * omega).sin()));
                }
                for k in 0..q {
                    let omega = 1.0 / 10000f64.powf(k as f64 / q as f64);
                    out.push(T::of((pos as f64 * omega).cos()));
                }
            }
        }
    }
    Tensor::new(vec![grid, grid, dim], out).expect("sized above")
}
