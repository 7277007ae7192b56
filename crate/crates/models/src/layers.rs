//! Parameterised building blocks shared by all architectures.

use cloudvol_tensor::{Init, ParamId, ParamStore, Real, Tape, Var};
use rand::Rng;

use crate::Result;

/// Standard deviation of the truncated-normal init of linear and attention weights.
pub const LINEAR_STD: f64 = 0.02;

pub const LN_EPS: f64 = 1e-5;

/// `x @ w + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let w = store.add_init(
            format!("{name}.w"),
            &[fan_in, fan_out],
            Init::TruncNormal(LINEAR_STD),
            rng,
        );
        let b = bias.then(|| store.add_init(format!("{name}.b"), &[fan_out], Init::Zeros, rng));
        Self { w, b }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let mut y = tape.matmul(x, w)?;
        if let Some(b) = self.b {
            let b = tape.param(store, b);
            y = tape.add(y, b)?;
        }
        Ok(y)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Real, R: Rng + ?Sized>(store: &mut ParamStore<T>, rng: &mut R, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add_init(format!("{name}.gamma"), &[dim], Init::Ones, rng),
            beta: store.add_init(format!("{name}.beta"), &[dim], Init::Zeros, rng),
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b, LN_EPS)?)
    }
}

/// Square-kernel convolution on NCHW tensors.
#[derive(Clone, Debug)]
pub struct Conv {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub padding: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
        gain: f64,
    ) -> Self {
        let init = Init::KaimingFanIn {
            fan_in: cin * k * k,
            gain,
        };
        let w = store.add_init(format!("{name}.w"), &[cout, cin, k, k], init, rng);
        let b = Some(store.add_init(format!("{name}.b"), &[cout], Init::Zeros, rng));
        Self { w, b, stride, padding }
    }

    /// `k x k` convolution that keeps the spatial size (odd `k`).
    pub fn same<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        gain: f64,
    ) -> Self {
        Self::new(store, rng, name, cin, cout, k, 1, k / 2, gain)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = self.b.map(|b| tape.param(store, b));
        Ok(tape.conv2d(x, w, b, self.stride, self.padding)?)
    }
}

/// Transposed convolution with `kernel == stride`, an exact `stride`x upsampler.
#[derive(Clone, Debug)]
pub struct ConvUp {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
}

impl ConvUp {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let init = Init::KaimingFanIn { fan_in: cin, gain: 1.0 };
        Self {
            w: store.add_init(format!("{name}.w"), &[cin, cout, stride, stride], init, rng),
            b: store.add_init(format!("{name}.b"), &[cout], Init::Zeros, rng),
            stride,
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = tape.param(store, self.w);
        let b = tape.param(store, self.b);
        Ok(tape.conv_transpose2d(x, w, Some(b), self.stride, 0)?)
    }
}

/// `skip(x) + conv(relu(conv(x)))` with 3x3 kernels; `skip` is a 1x1
/// projection when the channel count or the stride changes.
#[derive(Clone, Debug)]
pub struct ResConv {
    pub c1: Conv,
    pub c2: Conv,
    pub skip: Option<Conv>,
}

/// Gain of the second convolution of a residual branch, which keeps the
/// activation scale from compounding over un-normalised stacks.
const RESIDUAL_GAIN: f64 = 0.5;
/// Init gain of the final 1x1 projection to profile levels, so an
/// untrained model predicts values near zero.
pub const OUTPUT_GAIN: f64 = 0.1;

impl ResConv {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
    ) -> Self {
        Self::strided(store, rng, name, cin, cout, 1)
    }

    /// Residual block whose first convolution (and skip) downsample by `stride`.
    pub fn strided<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
    ) -> Self {
        let c1 = Conv::new(store, rng, &format!("{name}.conv1"), cin, cout, 3, stride, 1, 1.0);
        let c2 = Conv::same(store, rng, &format!("{name}.conv2"), cout, cout, 3, RESIDUAL_GAIN);
        let skip = (cin != cout || stride != 1)
            .then(|| Conv::new(store, rng, &format!("{name}.skip"), cin, cout, 1, stride, 0, 1.0));
        Self { c1, c2, skip }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.c1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        let h = self.c2.forward(tape, store, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(tape, store, x)?,
            None => x,
        };
        Ok(tape.add(s, h)?)
    }
}

/// NCHW -> NHWC.
pub fn to_channels_last<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    Ok(tape.transpose(x, &[0, 2, 3, 1])?)
}

/// NHWC -> NCHW.
pub fn to_channels_first<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    Ok(tape.transpose(x, &[0, 3, 1, 2])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cloudvol_tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_parameter_arithmetic() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Conv::same(&mut store, &mut rng, "c", 11, 32, 3, 1.0);
        assert_eq!(store.count(), 11 * 32 * 9 + 32);
    }

    #[test]
    fn res_conv_keeps_shape_and_projects_channels() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = ResConv::new(&mut store, &mut rng, "a", 3, 3);
        let b = ResConv::new(&mut store, &mut rng, "b", 3, 5);
        assert!(a.skip.is_none() && b.skip.is_some());
        let mut tape = Tape::new();
        let x = tape.input(Tensor::from_fn(vec![2, 3, 6, 6], |i| (i as f64 * 0.37).sin()));
        let y = a.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), [2, 3, 6, 6]);
        let z = b.forward(&mut tape, &store, y).unwrap();
        assert_eq!(tape.shape(z), [2, 5, 6, 6]);
    }

    #[test]
    fn conv_up_doubles_side() {
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let up = ConvUp::new(&mut store, &mut rng, "up", 4, 2, 2);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::zeros(vec![1, 4, 5, 5]));
        let y = up.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.shape(y), [1, 2, 10, 10]);
    }
}
