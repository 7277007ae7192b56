//! Naive reference implementations of the curtain metrics, written with
//! plain nested loops over 2D arrays.

#![allow(dead_code)]

use std::collections::HashSet;

pub type Grid = Vec<Vec<f64>>;

pub fn rmse(p: &Grid, t: &Grid, m: &[Vec<bool>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0.0;
    for i in 0..p.len() {
        for j in 0..p[i].len() {
            if m[i][j] {
                s += (p[i][j] - t[i][j]).powi(2);
                n += 1.0;
            }
        }
    }
    (s / n).sqrt()
}

pub fn psnr(p: &Grid, t: &Grid, m: &[Vec<bool>], range: f64) -> f64 {
    let mse = rmse(p, t, m).powi(2);
    if mse < range * range * 1e-10 {
        100.0
    } else {
        20.0 * range.log10() - 10.0 * mse.log10()
    }
}

fn window_ssim(p: &Grid, t: &Grid, r0: usize, c0: usize, h: usize, w: usize, gauss: bool, range: f64) -> f64 {
    let mut wt = vec![vec![0.0; w]; h];
    let mut total = 0.0;
    for a in 0..h {
        for b in 0..w {
            wt[a][b] = if gauss {
                let (da, db) = (a as f64 - 5.0, b as f64 - 5.0);
                (-(da * da + db * db) / (2.0 * 1.5 * 1.5)).exp()
            } else {
                1.0
            };
            total += wt[a][b];
        }
    }
    let mean = |g: &Grid| {
        let mut s = 0.0;
        for a in 0..h {
            for b in 0..w {
                s += wt[a][b] / total * g[r0 + a][c0 + b];
            }
        }
        s
    };
    let (mx, my) = (mean(p), mean(t));
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for a in 0..h {
        for b in 0..w {
            let k = wt[a][b] / total;
            let (dx, dy) = (p[r0 + a][c0 + b] - mx, t[r0 + a][c0 + b] - my);
            vx += k * dx * dx;
            vy += k * dy * dy;
            cxy += k * dx * dy;
        }
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
    let cs = (2.0 * cxy + c2) / (vx + vy + c2);
    lum * cs
}

pub fn ssim(p: &Grid, t: &Grid, range: f64) -> f64 {
    let (h, w) = (p.len(), p[0].len());
    if h < 11 || w < 11 {
        return window_ssim(p, t, 0, 0, h, w, false, range);
    }
    let mut s = 0.0;
    let mut n = 0.0;
    for r in 0..=h - 11 {
        for c in 0..=w - 11 {
            s += window_ssim(p, t, r, c, 11, 11, true, range);
            n += 1.0;
        }
    }
    s / n
}

pub fn dice(a: &[Vec<bool>], b: &[Vec<bool>]) -> f64 {
    let set = |m: &[Vec<bool>]| -> HashSet<(usize, usize)> {
        let mut s = HashSet::new();
        for (i, row) in m.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                if x {
                    s.insert((i, j));
                }
            }
        }
        s
    };
    let (sa, sb) = (set(a), set(b));
    if sa.is_empty() && sb.is_empty() {
        return 1.0;
    }
    2.0 * sa.intersection(&sb).count() as f64 / (sa.len() + sb.len()) as f64
}

pub fn flatten<T: Copy>(g: &[Vec<T>]) -> Vec<T> {
    g.iter().flatten().copied().collect()
}
