use cloudvol_tensor::{ParamStore, Real, Tape, Var};
use rand::Rng;

use super::{EncoderOutput, PatchExpand, SwinConfig};
use crate::layers::{LayerNorm, Linear};
use crate::Result;

/// Lightweight image decoder for pre-training: patch expansion with skip
/// fusion back to the token grid, then a per-token linear pixel predictor.
#[derive(Clone, Debug)]
pub struct MaeDecoder {
    token_px: usize,
    in_channels: usize,
    /// Indexed by encoder stage, `0..n_stages - 1`.
    up: Vec<(PatchExpand, Linear)>,
    norm: LayerNorm,
    pred: Linear,
}

pub const MAE_PREFIX: &str = "mae.";

impl MaeDecoder {
    pub fn build<T: Real, R: Rng + ?Sized>(enc: &SwinConfig, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let up = (0..enc.n_stages() - 1)
            .map(|s| {
                let d = enc.dims[s];
                (
                    PatchExpand::new(store, rng, &format!("mae.up{s}"), 2 * d),
                    Linear::new(store, rng, &format!("mae.fuse{s}"), 2 * d, d, true),
                )
            })
            .collect();
        let d0 = enc.dims[0];
        let p = enc.token_px;
        Self {
            token_px: p,
            in_channels: enc.in_channels,
            up,
            norm: LayerNorm::new(store, rng, "mae.norm", d0),
            pred: Linear::new(store, rng, "mae.pred", d0, p * p * enc.in_channels, true),
        }
    }

    /// Reconstructed image `[B, C_in, S, S]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, enc: &EncoderOutput) -> Result<Var> {
        let mut x = enc.last();
        for s in (0..self.up.len()).rev() {
            let (expand, fuse) = &self.up[s];
            let u = expand.forward(tape, store, x)?;
            let cat = tape.concat(&[u, enc.features[s]], 3)?;
            x = fuse.forward(tape, store, cat)?;
        }
        let x = self.norm.forward(tape, store, x)?;
        let x = self.pred.forward(tape, store, x)?;
        let sh = tape.shape(x).to_vec();
        let (b, g, p, c) = (sh[0], sh[1], self.token_px, self.in_channels);
        let x = tape.reshape(x, &[b, g, g, p, p, c])?;
        let x = tape.transpose(x, &[0, 5, 1, 3, 2, 4])?;
        Ok(tape.reshape(x, &[b, c, g * p, g * p])?)
    }
}
