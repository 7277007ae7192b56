//! Deterministic value noise and fractal sums.
//!
//! Only integer hashing and basic float arithmetic are used, so fields are
//! identical on every platform.

#[inline]
fn mix(mut x: u64) -> u64 {
    // splitmix64 finaliser
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Lattice value in [-1, 1].
#[inline]
fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h =
        mix(seed
            ^ mix((ix as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (iy as u64).wrapping_mul(0xc2b2_ae3d_27d4_eb4f)));
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Hash of three integer coordinates to a value in [-1, 1].
#[inline]
pub fn hash3(seed: u64, a: u64, b: u64, c: u64) -> f64 {
    let h = mix(mix(mix(seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15)) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f)) ^ c);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

#[inline]
fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[derive(Clone, Copy, Debug)]
pub struct ValueNoise {
    seed: u64,
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed: mix(seed) }
    }

    /// Smooth noise in [-1, 1] with unit lattice spacing.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let (x0, y0) = (x.floor(), y.floor());
        let (ix, iy) = (x0 as i64, y0 as i64);
        let (u, v) = (fade(x - x0), fade(y - y0));
        let a = lattice(self.seed, ix, iy);
        let b = lattice(self.seed, ix + 1, iy);
        let c = lattice(self.seed, ix, iy + 1);
        let d = lattice(self.seed, ix + 1, iy + 1);
        let top = a + (b - a) * u;
        let bot = c + (d - c) * u;
        top + (bot - top) * v
    }

    /// Fractal sum normalised back to roughly [-1, 1].
    pub fn fbm(&self, x: f64, y: f64, octaves: u32) -> f64 {
        let (mut sum, mut amp, mut freq, mut norm) = (0.0, 1.0, 1.0, 0.0);
        for o in 0..octaves {
            // offset octaves so lattice points do not line up
            let off = o as f64 * 17.31;
            sum += amp * self.sample(x * freq + off, y * freq - off);
            norm += amp;
            amp *= 0.5;
            freq *= 2.0;
        }
        sum / norm
    }
}

/// Dense fractal field over a `rows x cols` grid with the given feature scale (pixels).
pub fn fbm_field(seed: u64, rows: usize, cols: usize, scale: f64, octaves: u32) -> Vec<f64> {
    let n = ValueNoise::new(seed);
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            out.push(n.fbm(j as f64 / scale, i as f64 / scale, octaves));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_deterministic() {
        let n = ValueNoise::new(3);
        for i in 0..500 {
            let (x, y) = (i as f64 * 0.37, i as f64 * -0.11);
            let v = n.fbm(x, y, 4);
            assert!((-1.0..=1.0).contains(&v));
            assert_eq!(v.to_bits(), ValueNoise::new(3).fbm(x, y, 4).to_bits());
        }
    }

    #[test]
    fn continuous_across_cells() {
        let n = ValueNoise::new(9);
        let a = n.sample(1.0 - 1e-9, 0.3);
        let b = n.sample(1.0, 0.3);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn seeds_differ() {
        let a = fbm_field(1, 8, 8, 4.0, 3);
        let b = fbm_field(2, 8, 8, 4.0, 3);
        assert_ne!(a, b);
    }
}
