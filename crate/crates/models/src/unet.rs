//! Residual U-Net baseline mapping imagery straight to `V x 80` level stacks.

use cloudvol_core::channels::N_CHANNELS;
use cloudvol_core::heights::LEVELS;
use cloudvol_tensor::{ParamStore, Real, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::config_err;
use crate::layers::{Conv, ConvUp, ResConv, OUTPUT_GAIN};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    /// Channels of the first convolution; level `i` has `base * (i + 1)`.
    pub base: usize,
    /// Number of stride-2 down blocks (and matching up blocks).
    pub depth: usize,
    pub n_vars: usize,
    pub levels: usize,
}

impl UNetConfig {
    pub fn full(n_vars: usize) -> Self {
        Self {
            in_channels: N_CHANNELS,
            base: 32,
            depth: 4,
            n_vars,
            levels: LEVELS,
        }
    }

    pub fn desk(n_vars: usize) -> Self {
        Self {
            base: 16,
            ..Self::full(n_vars)
        }
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base * (level + 1)
    }

    pub fn out_channels(&self) -> usize {
        self.n_vars * self.levels
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base == 0 || self.depth == 0 || self.levels == 0 {
            return config_err(format!("U-Net sizes must be positive: {self:?}"));
        }
        if !(1..=3).contains(&self.n_vars) {
            return config_err(format!("n_vars must be 1..=3, got {}", self.n_vars));
        }
        Ok(())
    }

    /// Input side must survive `depth` halvings.
    pub fn check_input(&self, side: usize) -> Result<()> {
        let f = 1 << self.depth;
        if side == 0 || side % f != 0 {
            return config_err(format!("input side {side} is not divisible by {f}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct UpBlock {
    up: ConvUp,
    res: ResConv,
}

#[derive(Clone, Debug)]
pub struct UNet {
    pub config: UNetConfig,
    stem: Conv,
    enc0: ResConv,
    down: Vec<ResConv>,
    /// Deepest first.
    up: Vec<UpBlock>,
    out: Conv,
}

impl UNet {
    pub fn build<T: Real, R: Rng + ?Sized>(config: UNetConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = |i| config.channels(i);
        let stem = Conv::same(store, rng, "unet.stem", config.in_channels, c(0), 3, 1.0);
        let enc0 = ResConv::new(store, rng, "unet.enc0", c(0), c(0));
        let down = (1..=config.depth)
            .map(|i| ResConv::strided(store, rng, &format!("unet.down{i}"), c(i - 1), c(i), 2))
            .collect();
        let up = (1..=config.depth)
            .rev()
            .map(|i| UpBlock {
                up: ConvUp::new(store, rng, &format!("unet.up{i}.up"), c(i), c(i - 1), 2),
                res: ResConv::new(store, rng, &format!("unet.up{i}.res"), 2 * c(i - 1), c(i - 1)),
            })
            .collect();
        let out = Conv::same(store, rng, "unet.out", c(0), config.out_channels(), 1, OUTPUT_GAIN);
        Ok(Self {
            config,
            stem,
            enc0,
            down,
            up,
            out,
        })
    }

    /// `[B, C_in, H, W]` -> `[B, V * levels, H, W]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.config.in_channels || s[2] != s[3] {
            return config_err(format!(
                "U-Net expects [B, {}, S, S], got {s:?}",
                self.config.in_channels
            ));
        }
        self.config.check_input(s[2])?;
        let h = self.stem.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = self.enc0.forward(tape, store, h)?;
        let mut h = tape.relu(h)?;
        let mut skips = Vec::with_capacity(self.config.depth);
        for block in &self.down {
            skips.push(h);
            let d = block.forward(tape, store, h)?;
            h = tape.relu(d)?;
        }
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let u = block.up.forward(tape, store, h)?;
            let cat = tape.concat(&[u, skip], 1)?;
            let r = block.res.forward(tape, store, cat)?;
            h = tape.relu(r)?;
        }
        self.out.forward(tape, store, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudvol_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn output_shape_for_one_and_three_variables() {
        for v in [1, 3] {
            let mut store = ParamStore::<f32>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let cfg = UNetConfig {
                base: 4,
                depth: 2,
                ..UNetConfig::full(v)
            };
            let net = UNet::build(cfg, &mut store, &mut rng).unwrap();
            let mut tape = Tape::new();
            let x = tape.input(Tensor::zeros(vec![2, N_CHANNELS, 8, 8]));
            let y = net.forward(&mut tape, &store, x).unwrap();
            assert_eq!(tape.shape(y), [2, v * LEVELS, 8, 8]);
            assert!(tape.value(y).is_finite());
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::build(UNetConfig::desk(1), &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![1, N_CHANNELS, 24, 24]));
        assert!(net.forward(&mut tape, &store, x).is_err());
        assert!(UNetConfig {
            n_vars: 4,
            ..UNetConfig::desk(1)
        }
        .validate()
        .is_err());
    }
}
