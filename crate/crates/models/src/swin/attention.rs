use cloudvol_tensor::{Init, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::Rng;

use crate::layers::{LayerNorm, Linear, LINEAR_STD};
use crate::Result;

/// Additive logit for token pairs that the shifted layout made adjacent.
pub const MASKED_LOGIT: f64 = -100.0;

/// Index into the `(2w - 1)^2` relative-bias table for every pair of
/// positions in a `w x w` window, row-major `[w*w, w*w]`.
pub fn relative_position_index(w: usize) -> Vec<usize> {
    let n = w * w;
    let span = 2 * w - 1;
    let mut idx = Vec::with_capacity(n * n);
    for p in 0..n {
        let (i1, j1) = (p / w, p % w);
        for q in 0..n {
            let (i2, j2) = (q / w, q % w);
            idx.push((i1 + w - 1 - i2) * span + (j1 + w - 1 - j2));
        }
    }
    idx
}

/// `[nW, N, N]` additive mask for attention on a grid rolled by `-shift`.
///
/// Tokens in the same window but from different regions of the original
/// grid (wrapped around by the roll) get [`MASKED_LOGIT`].
pub fn shift_attention_mask(h: usize, w: usize, ws: usize, shift: usize) -> Vec<f64> {
    let region = |x: usize, side: usize| {
        if x < side - ws {
            0
        } else if x < side - shift {
            1
        } else {
            2
        }
    };
    let label = |i: usize, j: usize| region(i, h) * 3 + region(j, w);
    let n = ws * ws;
    let (nh, nw) = (h / ws, w / ws);
    let mut out = Vec::with_capacity(nh * nw * n * n);
    for wi in 0..nh {
        for wj in 0..nw {
            let labels: Vec<usize> = (0..n).map(|p| label(wi * ws + p / ws, wj * ws + p % ws)).collect();
            for &a in &labels {
                for &b in &labels {
                    out.push(if a == b { 0.0 } else { MASKED_LOGIT });
                }
            }
        }
    }
    out
}

/// Multi-head self-attention inside square windows with a learned
/// relative position bias.
#[derive(Clone, Debug)]
pub struct WindowAttention {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub qkv: Linear,
    pub proj: Linear,
    pub rel_table: ParamId,
    rel_index: Vec<usize>,
}

impl WindowAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
    ) -> Self {
        let span = 2 * window - 1;
        Self {
            dim,
            heads,
            window,
            qkv: Linear::new(store, rng, &format!("{name}.qkv"), dim, 3 * dim, true),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim, true),
            rel_table: store.add_init(
                format!("{name}.rel_bias"),
                &[span * span, heads],
                Init::TruncNormal(LINEAR_STD),
                rng,
            ),
            rel_index: relative_position_index(window),
        }
    }

    /// Attention over windows `[B * nW, N, C]`. `mask`, when given, is
    /// `[nW, N, N]` and repeats over the batch.
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mask: Option<&[f64]>,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let (bw, n, c) = (s[0], s[1], s[2]);
        let (h, d) = (self.heads, self.dim / self.heads);
        let qkv = self.qkv.forward(tape, store, x)?;
        let qkv = tape.reshape(qkv, &[bw, n, 3, h, d])?;
        let qkv = tape.transpose(qkv, &[2, 0, 3, 1, 4])?;
        let mut parts = [qkv; 3];
        for (k, p) in parts.iter_mut().enumerate() {
            let t = tape.slice(qkv, 0, k, 1)?;
            *p = tape.reshape(t, &[bw, h, n, d])?;
        }
        let [q, k, v] = parts;
        let q = tape.scale(q, 1.0 / (d as f64).sqrt())?;
        let mut attn = tape.matmul_t(q, k)?;

        let table = tape.param(store, self.rel_table);
        let bias = tape.embedding_lookup(table, &self.rel_index)?;
        let bias = tape.transpose(bias, &[1, 0])?;
        let bias = tape.reshape(bias, &[h, n, n])?;
        attn = tape.add(attn, bias)?;

        if let Some(m) = mask {
            let nw = m.len() / (n * n);
            let mut rep = Vec::with_capacity(nw * h * n * n);
            for w in 0..nw {
                for _ in 0..h {
                    rep.extend(m[w * n * n..(w + 1) * n * n].iter().map(|&v| T::of(v)));
                }
            }
            let mc = tape.constant(Tensor::new(vec![nw, h, n, n], rep)?);
            let a = tape.reshape(attn, &[bw / nw, nw, h, n, n])?;
            let a = tape.add(a, mc)?;
            attn = tape.reshape(a, &[bw, h, n, n])?;
        }
        let attn = tape.softmax(attn)?;
        let out = tape.matmul(attn, v)?;
        let out = tape.transpose(out, &[0, 2, 1, 3])?;
        let out = tape.reshape(out, &[bw, n, c])?;
        self.proj.forward(tape, store, out)
    }
}

/// Pre-norm transformer block on `[B, H, W, C]`: (shifted) window
/// attention then a GELU MLP, both residual.
#[derive(Clone, Debug)]
pub struct SwinBlock {
    pub norm1: LayerNorm,
    pub attn: WindowAttention,
    pub norm2: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub shift: usize,
}

impl SwinBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        heads: usize,
        window: usize,
        shift: usize,
        mlp_ratio: usize,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, rng, &format!("{name}.norm1"), dim),
            attn: WindowAttention::new(store, rng, &format!("{name}.attn"), dim, heads, window),
            norm2: LayerNorm::new(store, rng, &format!("{name}.norm2"), dim),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), dim, mlp_ratio * dim, true),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), mlp_ratio * dim, dim, true),
            shift,
        }
    }

    /// Plain window attention on `[B, H, W, C]`.
    pub fn window_attention<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let ws = self.attn.window;
        let xw = tape.window_partition(x, ws)?;
        let y = self.attn.forward(tape, store, xw, None)?;
        Ok(tape.window_merge(y, ws, s[1], s[2])?)
    }

    /// Window attention on the grid rolled by `-shift`, with the region
    /// mask, rolled back afterwards. Always takes the roll-and-mask path.
    pub fn shifted_window_attention<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        shift: usize,
    ) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        let ws = self.attn.window;
        let sh = shift as isize;
        let rolled = tape.roll(x, -sh, -sh)?;
        let xw = tape.window_partition(rolled, ws)?;
        let mask = shift_attention_mask(s[1], s[2], ws, shift);
        let y = self.attn.forward(tape, store, xw, Some(&mask))?;
        let y = tape.window_merge(y, ws, s[1], s[2])?;
        Ok(tape.roll(y, sh, sh)?)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.norm1.forward(tape, store, x)?;
        let h = if self.shift == 0 {
            self.window_attention(tape, store, h)?
        } else {
            self.shifted_window_attention(tape, store, h, self.shift)?
        };
        let x = tape.add(x, h)?;
        let h = self.norm2.forward(tape, store, x)?;
        let h = self.fc1.forward(tape, store, h)?;
        let h = tape.gelu(h)?;
        let h = self.fc2.forward(tape, store, h)?;
        Ok(tape.add(x, h)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_index_spans_the_table() {
        let w = 3;
        let idx = relative_position_index(w);
        assert_eq!(idx.len(), 81);
        assert!(idx.iter().all(|&i| i < 25));
        // a position relative to itself is always the centre entry
        for p in 0..9 {
            assert_eq!(idx[p * 9 + p], 12);
        }
        let mut seen = [false; 25];
        idx.iter().for_each(|&i| seen[i] = true);
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn shift_mask_layout() {
        // 4x4 grid, 2x2 windows, shift 1
        let m = shift_attention_mask(4, 4, 2, 1);
        assert_eq!(m.len(), 4 * 16);
        // first window lies in a single region: nothing masked
        assert!(m[..16].iter().all(|&v| v == 0.0));
        // last window mixes all four corner regions: only the diagonal is open
        let last = &m[48..];
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(last[a * 4 + b] == 0.0, a == b);
            }
        }
        assert!(shift_attention_mask(4, 4, 2, 0).iter().all(|&v| v == 0.0));
    }
}
