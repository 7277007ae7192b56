//! Loop-based window attention in f64, written independently of the tape.

pub struct AttnParams<'a> {
    pub qkv_w: &'a [f64],
    pub qkv_b: &'a [f64],
    pub proj_w: &'a [f64],
    pub proj_b: &'a [f64],
    pub table: &'a [f64],
    pub heads: usize,
}

/// `x` is `[B, H, W, C]`; windows of side `ws` on the grid rolled by `-shift`.
pub fn shifted_window_attention(
    x: &[f64],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    ws: usize,
    shift: usize,
    p: &AttnParams,
) -> Vec<f64> {
    let nh = p.heads;
    let d = c / nh;
    let span = 2 * ws - 1;
    let mut out = vec![0.0; x.len()];
    for bi in 0..b {
        // original coordinate of each rolled position
        let orig = |r: usize, s: usize| ((r + shift) % h, (s + shift) % w);
        for wi in 0..h / ws {
            for wj in 0..w / ws {
                let toks: Vec<(usize, usize)> = (0..ws * ws).map(|t| (wi * ws + t / ws, wj * ws + t % ws)).collect();
                let feats: Vec<Vec<f64>> = toks
                    .iter()
                    .map(|&(r, s)| {
                        let (oi, oj) = orig(r, s);
                        let base = ((bi * h + oi) * w + oj) * c;
                        let xin = &x[base..base + c];
                        (0..3 * c)
                            .map(|o| p.qkv_b[o] + (0..c).map(|k| xin[k] * p.qkv_w[k * 3 * c + o]).sum::<f64>())
                            .collect()
                    })
                    .collect();
                let n = toks.len();
                let mut merged = vec![vec![0.0; c]; n];
                for head in 0..nh {
                    for a in 0..n {
                        let q: Vec<f64> = (0..d).map(|e| feats[a][head * d + e]).collect();
                        let mut logits = vec![0.0; n];
                        for (bq, l) in logits.iter_mut().enumerate() {
                            let k: f64 = (0..d).map(|e| q[e] * feats[bq][c + head * d + e]).sum();
                            let (i1, j1) = (toks[a].0 % ws, toks[a].1 % ws);
                            let (i2, j2) = (toks[bq].0 % ws, toks[bq].1 % ws);
                            let rel = (i1 + ws - 1 - i2) * span + (j1 + ws - 1 - j2);
                            *l = k / (d as f64).sqrt() + p.table[rel * nh + head];
                            // pairs that were not neighbours before the roll are cut off
                            let (oa, ob) = (orig(toks[a].0, toks[a].1), orig(toks[bq].0, toks[bq].1));
                            let contiguous = oa.0 as isize - ob.0 as isize == toks[a].0 as isize - toks[bq].0 as isize
                                && oa.1 as isize - ob.1 as isize == toks[a].1 as isize - toks[bq].1 as isize;
                            if !contiguous {
                                *l -= 100.0;
                            }
                        }
                        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
                        for e in 0..d {
                            merged[a][head * d + e] = (0..n)
                                .map(|bq| (logits[bq] - mx).exp() / z * feats[bq][2 * c + head * d + e])
                                .sum();
                        }
                    }
                }
                for (a, &(r, s)) in toks.iter().enumerate() {
                    let (oi, oj) = orig(r, s);
                    let base = ((bi * h + oi) * w + oj) * c;
                    for o in 0..c {
                        out[base + o] = p.proj_b[o] + (0..c).map(|k| merged[a][k] * p.proj_w[k * c + o]).sum::<f64>();
                    }
                }
            }
        }
    }
    out
}
