use cloudvol_tensor::{Init, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use super::{position_encoding, MetadataVector, SwinBlock, SwinConfig, TokenMask, METADATA_DIM};
use crate::error::config_err;
use crate::layers::{to_channels_last, Conv, LayerNorm, Linear, LINEAR_STD};
use crate::Result;

/// 2x2 token merge: `[B, H, W, C]` -> `[B, H/2, W/2, 2C]`.
#[derive(Clone, Debug)]
pub struct PatchMerging {
    pub norm: LayerNorm,
    pub reduce: Linear,
}

impl PatchMerging {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize) -> Self {
        Self {
            norm: LayerNorm::new(store, rng, &format!("{name}.norm"), 4 * dim),
            reduce: Linear::new(store, rng, &format!("{name}.reduce"), 4 * dim, 2 * dim, false),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let x = tape.reshape(x, &[b, h / 2, 2, w / 2, 2, c])?;
        let x = tape.transpose(x, &[0, 1, 3, 2, 4, 5])?;
        let x = tape.reshape(x, &[b, h / 2, w / 2, 4 * c])?;
        let x = self.norm.forward(tape, store, x)?;
        self.reduce.forward(tape, store, x)
    }
}

/// Inverse layout of [`PatchMerging`]: `[B, H, W, C]` -> `[B, 2H, 2W, C/2]`.
#[derive(Clone, Debug)]
pub struct PatchExpand {
    pub expand: Linear,
    pub norm: LayerNorm,
}

impl PatchExpand {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize) -> Self {
        Self {
            expand: Linear::new(store, rng, &format!("{name}.expand"), dim, 2 * dim, false),
            norm: LayerNorm::new(store, rng, &format!("{name}.norm"), dim / 2),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let x = self.expand.forward(tape, store, x)?;
        let x = tape.reshape(x, &[b, h, w, 2, 2, c / 2])?;
        let x = tape.transpose(x, &[0, 1, 3, 2, 4, 5])?;
        let x = tape.reshape(x, &[b, 2 * h, 2 * w, c / 2])?;
        self.norm.forward(tape, store, x)
    }
}

/// Per-stage token features, `[B, H_s, W_s, C_s]`; the last one is normalised.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub features: Vec<Var>,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.features.last().expect("at least one stage")
    }
}

#[derive(Clone, Debug)]
pub struct SwinEncoder {
    pub config: SwinConfig,
    patch_embed: Conv,
    patch_norm: LayerNorm,
    pub mask_token: ParamId,
    meta_embed: Option<Linear>,
    stages: Vec<Vec<SwinBlock>>,
    merges: Vec<PatchMerging>,
    norm: LayerNorm,
}

/// Prefix of every encoder parameter name.
pub const ENCODER_PREFIX: &str = "encoder.";

impl SwinEncoder {
    pub fn build<T: Real, R: Rng + ?Sized>(config: SwinConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d0 = config.dims[0];
        let p = config.token_px;
        let patch_embed = Conv::new(store, rng, "encoder.patch_embed", config.in_channels, d0, p, p, 0, 1.0);
        let patch_norm = LayerNorm::new(store, rng, "encoder.patch_norm", d0);
        let mask_token = store.add_init("encoder.mask_token", &[d0], Init::TruncNormal(LINEAR_STD), rng);
        let meta_embed = config
            .metadata
            .then(|| Linear::new(store, rng, "encoder.meta_embed", METADATA_DIM, d0, true));
        let mut stages = Vec::new();
        let mut merges = Vec::new();
        for s in 0..config.n_stages() {
            let (dim, heads) = (config.dims[s], config.heads[s]);
            let (ws, shift) = (config.stage_window(s), config.stage_shift(s));
            stages.push(
                (0..config.depths[s])
                    .map(|k| {
                        let name = format!("encoder.stage{s}.block{k}");
                        let sh = if k % 2 == 1 { shift } else { 0 };
                        SwinBlock::new(store, rng, &name, dim, heads, ws, sh, config.mlp_ratio)
                    })
                    .collect(),
            );
            if s + 1 < config.n_stages() {
                merges.push(PatchMerging::new(store, rng, &format!("encoder.merge{s}"), dim));
            }
        }
        let norm = LayerNorm::new(store, rng, "encoder.norm", *config.dims.last().expect("validated"));
        Ok(Self {
            config,
            patch_embed,
            patch_norm,
            mask_token,
            meta_embed,
            stages,
            merges,
            norm,
        })
    }

    pub fn blocks(&self, stage: usize) -> &[SwinBlock] {
        &self.stages[stage]
    }

    /// Patch embedding, mask-token substitution, position and metadata
    /// encodings: `[B, C_in, S, S]` -> `[B, G, G, D]`.
    pub fn embed<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        meta: Option<&[MetadataVector]>,
        mask: Option<&[TokenMask]>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(img).to_vec();
        if s.len() != 4 || s[1] != cfg.in_channels || s[2] != cfg.image_size || s[3] != cfg.image_size {
            return config_err(format!(
                "encoder expects [B, {}, {sz}, {sz}], got {s:?}",
                cfg.in_channels,
                sz = cfg.image_size
            ));
        }
        let (b, g, d) = (s[0], cfg.grid(), cfg.dims[0]);
        let x = self.patch_embed.forward(tape, store, img)?;
        let x = to_channels_last(tape, x)?;
        let mut x = self.patch_norm.forward(tape, store, x)?;

        if let Some(masks) = mask {
            if masks.len() != b || masks.iter().any(|m| m.grid != g) {
                return config_err(format!("need {b} masks over a {g}x{g} token grid"));
            }
            let mut m = Vec::with_capacity(b * g * g * d);
            for mk in masks {
                for t in mk.tokens() {
                    m.extend(std::iter::repeat_n(if t { T::one() } else { T::zero() }, d));
                }
            }
            let keep: Vec<T> = m.iter().map(|&v| T::one() - v).collect();
            let keep = tape.constant(Tensor::new(vec![b, g, g, d], keep)?);
            let m = tape.constant(Tensor::new(vec![b, g, g, d], m)?);
            let tok = tape.param(store, self.mask_token);
            let kept = tape.mul(x, keep)?;
            let filled = tape.mul(m, tok)?;
            x = tape.add(kept, filled)?;
        }

        let pos = tape.constant(position_encoding(g, d));
        x = tape.add(x, pos)?;

        if let Some(embed) = &self.meta_embed {
            let Some(meta) = meta else {
                return config_err("metadata embedding enabled but no metadata given");
            };
            if meta.len() != b {
                return config_err(format!("need {b} metadata vectors, got {}", meta.len()));
            }
            let flat: Vec<f64> = meta.iter().flat_map(|m| m.0).collect();
            let mv = tape.constant(Tensor::new(
                vec![b, METADATA_DIM],
                flat.into_iter().map(T::of).collect(),
            )?);
            let e = embed.forward(tape, store, mv)?;
            let e = tape.reshape(e, &[b, 1, 1, d])?;
            let e = tape.expand(e, &[b, g, g, d])?;
            x = tape.add(x, e)?;
        }
        Ok(x)
    }

    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        img: Var,
        meta: Option<&[MetadataVector]>,
        mask: Option<&[TokenMask]>,
    ) -> Result<EncoderOutput> {
        let mut x = self.embed(tape, store, img, meta, mask)?;
        let mut features = Vec::with_capacity(self.stages.len());
        for (s, blocks) in self.stages.iter().enumerate() {
            for blk in blocks {
                x = blk.forward(tape, store, x)?;
            }
            if s + 1 == self.stages.len() {
                x = self.norm.forward(tape, store, x)?;
                features.push(x);
            } else {
                features.push(x);
                x = self.merges[s].forward(tape, store, x)?;
            }
        }
        Ok(EncoderOutput { features })
    }
}
