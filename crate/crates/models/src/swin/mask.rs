use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Picks exactly `round(ratio * n)` of `n` units uniformly without replacement.
pub fn select_units(n: usize, ratio: f64, seed: u64) -> Vec<bool> {
    let k = ((ratio.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    let mut out = vec![false; n];
    for &i in &idx[..k] {
        out[i] = true;
    }
    out
}

/// Masked mask units over a square token grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMask {
    /// Token grid side.
    pub grid: usize,
    /// Mask unit side in tokens.
    pub unit: usize,
    /// Row-major over the `(grid / unit)^2` units.
    pub units: Vec<bool>,
}

impl TokenMask {
    pub fn random(grid: usize, unit: usize, ratio: f64, seed: u64) -> Self {
        let side = grid / unit;
        Self {
            grid,
            unit,
            units: select_units(side * side, ratio, seed),
        }
    }

    pub fn none(grid: usize, unit: usize) -> Self {
        Self::random(grid, unit, 0.0, 0)
    }

    pub fn units_side(&self) -> usize {
        self.grid / self.unit
    }

    pub fn n_masked_units(&self) -> usize {
        self.units.iter().filter(|&&m| m).count()
    }

    pub fn token(&self, i: usize, j: usize) -> bool {
        self.units[(i / self.unit) * self.units_side() + j / self.unit]
    }

    /// Row-major `[grid, grid]` token flags.
    pub fn tokens(&self) -> Vec<bool> {
        (0..self.grid * self.grid)
            .map(|k| self.token(k / self.grid, k % self.grid))
            .collect()
    }

    /// Row-major pixel flags for tokens of `token_px` pixels.
    pub fn pixels(&self, token_px: usize) -> Vec<bool> {
        let side = self.grid * token_px;
        (0..side * side)
            .map(|k| self.token(k / side / token_px, k % side / token_px))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_of_4096_units() {
        let m = TokenMask::random(128, 2, 0.5, 3);
        assert_eq!(m.units.len(), 4096);
        assert_eq!(m.n_masked_units(), 2048);
        assert_eq!(m.tokens().iter().filter(|&&t| t).count(), 2048 * 4);
        assert_eq!(m, TokenMask::random(128, 2, 0.5, 3));
        assert_ne!(m, TokenMask::random(128, 2, 0.5, 4));
    }

    #[test]
    fn zero_ratio_masks_nothing() {
        let m = TokenMask::random(16, 2, 0.0, 9);
        assert!(m.tokens().iter().all(|&t| !t));
    }

    #[test]
    fn units_cover_whole_blocks() {
        let m = TokenMask::random(8, 2, 0.5, 1);
        let t = m.tokens();
        for i in (0..8).step_by(2) {
            for j in (0..8).step_by(2) {
                let v = t[i * 8 + j];
                assert!([t[i * 8 + j + 1], t[(i + 1) * 8 + j], t[(i + 1) * 8 + j + 1]]
                    .iter()
                    .all(|&x| x == v));
            }
        }
        let p = m.pixels(2);
        assert_eq!(p.len(), 256);
        assert_eq!(p.iter().filter(|&&x| x).count(), 4 * t.iter().filter(|&&x| x).count());
    }
}
