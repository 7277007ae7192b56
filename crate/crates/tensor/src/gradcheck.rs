//! Central-difference gradient checks (64-bit).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::tensor::numel;
use crate::{ParamId, ParamStore, Tape, Tensor, Var};

/// A single differentiable operation together with its attributes.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Add,
    Sub,
    Mul,
    Scale(f64),
    Matmul,
    MatmulT,
    /// Inputs: `x, w` or `x, w, bias`.
    Conv2d {
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        stride: usize,
        padding: usize,
    },
    Relu,
    Gelu,
    Log,
    Softmax,
    /// Inputs: `x, gamma, beta`.
    LayerNorm,
    Reshape(Vec<usize>),
    Transpose(Vec<usize>),
    WindowPartition(usize),
    WindowMerge {
        ws: usize,
        h: usize,
        w: usize,
    },
    Roll(isize, isize),
    Concat(usize),
    Slice {
        axis: usize,
        start: usize,
        len: usize,
    },
    Mean,
    Sum,
    EmbeddingLookup(Vec<usize>),
    Expand(Vec<usize>),
}

impl OpKind {
    fn apply(&self, tape: &mut Tape<f64>, v: &[Var]) -> Result<Var> {
        let arg = |i: usize| -> Result<Var> {
            v.get(i).copied().ok_or_else(|| crate::TensorError::Invalid {
                op: "grad_check",
                detail: format!("{self:?} needs at least {} inputs", i + 1),
            })
        };
        match self {
            OpKind::Add => tape.add(arg(0)?, arg(1)?),
            OpKind::Sub => tape.sub(arg(0)?, arg(1)?),
            OpKind::Mul => tape.mul(arg(0)?, arg(1)?),
            OpKind::Scale(s) => tape.scale(arg(0)?, *s),
            OpKind::Matmul => tape.matmul(arg(0)?, arg(1)?),
            OpKind::MatmulT => tape.matmul_t(arg(0)?, arg(1)?),
            OpKind::Conv2d { stride, padding } => tape.conv2d(arg(0)?, arg(1)?, v.get(2).copied(), *stride, *padding),
            OpKind::ConvTranspose2d { stride, padding } => {
                tape.conv_transpose2d(arg(0)?, arg(1)?, v.get(2).copied(), *stride, *padding)
            }
            OpKind::Relu => tape.relu(arg(0)?),
            OpKind::Gelu => tape.gelu(arg(0)?),
            OpKind::Log => tape.log(arg(0)?),
            OpKind::Softmax => tape.softmax(arg(0)?),
            OpKind::LayerNorm => tape.layer_norm(arg(0)?, arg(1)?, arg(2)?, 1e-5),
            OpKind::Reshape(s) => tape.reshape(arg(0)?, s),
            OpKind::Transpose(p) => tape.transpose(arg(0)?, p),
            OpKind::WindowPartition(ws) => tape.window_partition(arg(0)?, *ws),
            OpKind::WindowMerge { ws, h, w } => tape.window_merge(arg(0)?, *ws, *h, *w),
            OpKind::Roll(a, b) => tape.roll(arg(0)?, *a, *b),
            OpKind::Concat(axis) => tape.concat(v, *axis),
            OpKind::Slice { axis, start, len } => tape.slice(arg(0)?, *axis, *start, *len),
            OpKind::Mean => tape.mean(arg(0)?),
            OpKind::Sum => tape.sum(arg(0)?),
            OpKind::EmbeddingLookup(idx) => tape.embedding_lookup(arg(0)?, idx),
            OpKind::Expand(s) => tape.expand(arg(0)?, s),
        }
    }

    /// Draws a test input; keeps away from kinks and outside domains.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            OpKind::Log => rng.random_range(0.5..2.0),
            OpKind::Relu => {
                let m: f64 = rng.random_range(0.05..1.0);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            }
            _ => rng.random_range(-1.0..1.0),
        }
    }
}

/// Checks one op on random inputs of the given shapes.
///
/// The op output is reduced to a scalar through a random projection so that
/// every output element contributes. Returns the largest
/// `|analytic - numeric| / max(1, |analytic|)` over all input elements.
pub fn grad_check(op: &OpKind, shapes: &[Vec<usize>], seed: u64, h: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor<f64>> = shapes
        .iter()
        .map(|s| Tensor::from_fn(s.clone(), |_| op.sample(&mut rng)))
        .collect();
    // Probe the output shape once to build the projection.
    let out_shape = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = op.apply(&mut tape, &vars)?;
        tape.shape(out).to_vec()
    };
    let proj = Tensor::from_fn(out_shape, |_| rng.random_range(-1.0..1.0));
    check_fn(&inputs, h, |tape, vars| {
        let out = op.apply(tape, vars)?;
        let p = tape.constant(proj.clone());
        let prod = tape.mul(out, p)?;
        tape.sum(prod)
    })
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

fn check_h(h: f64) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return invalid("grad_check", format!("step must be positive, got {h}"));
    }
    Ok(())
}

/// Checks a scalar function of several input tensors.
pub fn check_fn(inputs: &[Tensor<f64>], h: f64, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>) -> Result<f64> {
    check_h(h)?;
    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let mut worst: f64 = 0.0;
    let mut work = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let zero = Tensor::zeros(inputs[k].shape().to_vec());
        let analytic = grads.wrt(*v).unwrap_or(&zero);
        for i in 0..numel(inputs[k].shape()) {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            worst = worst.max(rel_err(analytic.data()[i], (plus - minus) / (2.0 * h)));
        }
    }
    Ok(worst)
}

/// Checks parameter gradients of a scalar function of a [`ParamStore`].
///
/// With `sample = Some((n, seed))` only `n` randomly chosen scalar entries
/// are perturbed, which keeps whole-model checks affordable.
pub fn check_params(
    store: &ParamStore<f64>,
    h: f64,
    sample: Option<(usize, u64)>,
    f: impl Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
) -> Result<f64> {
    check_h(h)?;
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    let grads = tape.backward(out)?;
    drop(tape);

    let mut entries: Vec<(ParamId, usize)> = store
        .iter()
        .flat_map(|(id, p)| (0..p.value.numel()).map(move |i| (id, i)))
        .collect();
    if let Some((n, seed)) = sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // partial Fisher-Yates
        let n = n.min(entries.len());
        for i in 0..n {
            let j = rng.random_range(i..entries.len());
            entries.swap(i, j);
        }
        entries.truncate(n);
    }
    let mut work = store.clone();
    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(&mut tape, s)?;
        Ok(tape.value(out).data()[0])
    };
    let mut worst: f64 = 0.0;
    for (id, i) in entries {
        let analytic = grads.param(id).map_or(0.0, |g| g.data()[i]);
        let orig = work.value(id).data()[i];
        work.get_mut(id).value.data_mut()[i] = orig + h;
        let plus = eval(&work)?;
        work.get_mut(id).value.data_mut()[i] = orig - h;
        let minus = eval(&work)?;
        work.get_mut(id).value.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic, (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}
