use cloudvol_core::heights::LEVELS;
use cloudvol_tensor::{ParamStore, Real, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderOutput, PatchExpand, SwinBlock, SwinConfig};
use crate::error::config_err;
use crate::layers::{to_channels_first, Conv, ConvUp, LayerNorm, Linear, ResConv, OUTPUT_GAIN};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwinConvConfig {
    /// Swin blocks per decoder stage, indexed by the encoder stage it mirrors
    /// (`n_stages - 1` entries).
    pub depths: Vec<usize>,
    /// Channels of the pixel-resolution volume before the heads.
    pub volume_channels: usize,
    pub n_vars: usize,
    pub levels: usize,
}

impl SwinConvConfig {
    pub fn full(n_vars: usize) -> Self {
        Self {
            depths: vec![2, 2, 2],
            volume_channels: 96,
            n_vars,
            levels: LEVELS,
        }
    }

    pub fn desk(n_vars: usize) -> Self {
        Self {
            depths: vec![2],
            volume_channels: 16,
            n_vars,
            levels: LEVELS,
        }
    }

    pub fn validate(&self, enc: &SwinConfig) -> Result<()> {
        if self.depths.len() + 1 != enc.n_stages() {
            return config_err(format!(
                "{} decoder stages for a {}-stage encoder",
                self.depths.len(),
                enc.n_stages()
            ));
        }
        if !(1..=3).contains(&self.n_vars) || self.volume_channels == 0 || self.levels == 0 {
            return config_err(format!("bad volume decoder config {self:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Stage {
    expand: PatchExpand,
    fuse: Linear,
    blocks: Vec<SwinBlock>,
}

#[derive(Clone, Debug)]
struct Head {
    res: ResConv,
    out: Conv,
}

/// Mirrors the encoder with patch expansion and Swin blocks, then lifts the
/// token grid to pixels with transposed and residual convolutions, and
/// finishes with one prediction head per variable.
#[derive(Clone, Debug)]
pub struct SwinConvDecoder {
    pub config: SwinConvConfig,
    stages: Vec<Stage>,
    norm: LayerNorm,
    up: ConvUp,
    res: ResConv,
    heads: Vec<Head>,
}

impl SwinConvDecoder {
    pub fn build<T: Real, R: Rng + ?Sized>(
        config: SwinConvConfig,
        enc: &SwinConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate(enc)?;
        let stages = (0..enc.n_stages() - 1)
            .map(|s| {
                let d = enc.dims[s];
                let (ws, shift) = (enc.stage_window(s), enc.stage_shift(s));
                Stage {
                    expand: PatchExpand::new(store, rng, &format!("decoder.up{s}"), 2 * d),
                    fuse: Linear::new(store, rng, &format!("decoder.fuse{s}"), 2 * d, d, true),
                    blocks: (0..config.depths[s])
                        .map(|k| {
                            let sh = if k % 2 == 1 { shift } else { 0 };
                            let name = format!("decoder.stage{s}.block{k}");
                            SwinBlock::new(store, rng, &name, d, enc.heads[s], ws, sh, enc.mlp_ratio)
                        })
                        .collect(),
                }
            })
            .collect();
        let (d0, vc) = (enc.dims[0], config.volume_channels);
        let norm = LayerNorm::new(store, rng, "decoder.norm", d0);
        let up = ConvUp::new(store, rng, "decoder.pixel_up", d0, vc, enc.token_px);
        let res = ResConv::new(store, rng, "decoder.pixel_res", vc, vc);
        let heads = (0..config.n_vars)
            .map(|v| Head {
                res: ResConv::new(store, rng, &format!("heads.{v}.res"), vc, vc),
                out: Conv::same(store, rng, &format!("heads.{v}.out"), vc, config.levels, 1, OUTPUT_GAIN),
            })
            .collect();
        Ok(Self {
            config,
            stages,
            norm,
            up,
            res,
            heads,
        })
    }

    /// The shared `[B, volume_channels, S, S]` volume before the heads.
    pub fn volume<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, enc: &EncoderOutput) -> Result<Var> {
        let mut x = enc.last();
        for s in (0..self.stages.len()).rev() {
            let st = &self.stages[s];
            let u = st.expand.forward(tape, store, x)?;
            let cat = tape.concat(&[u, enc.features[s]], 3)?;
            x = st.fuse.forward(tape, store, cat)?;
            for blk in &st.blocks {
                x = blk.forward(tape, store, x)?;
            }
        }
        let x = self.norm.forward(tape, store, x)?;
        let x = to_channels_first(tape, x)?;
        let x = self.up.forward(tape, store, x)?;
        let x = self.res.forward(tape, store, x)?;
        Ok(tape.relu(x)?)
    }

    /// `[B, V * levels, S, S]`, head `v` in channels `v * levels..`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, enc: &EncoderOutput) -> Result<Var> {
        let vol = self.volume(tape, store, enc)?;
        let mut outs = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let y = h.res.forward(tape, store, vol)?;
            let y = tape.relu(y)?;
            outs.push(h.out.forward(tape, store, y)?);
        }
        if outs.len() == 1 {
            return Ok(outs[0]);
        }
        Ok(tape.concat(&outs, 1)?)
    }
}
