//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Node order is a topological order of the
//! graph, so the reverse pass is a single sweep from the loss back to the
//! leaves. Dropping the tape frees the graph.

use std::collections::HashMap;

use crate::error::{invalid, shape_err, Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::tensor::numel;
use crate::{ParamId, ParamStore, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Constant,
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Matmul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Conv2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Relu(Var),
    Gelu(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        rstd: Vec<T>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    WindowPartition {
        a: Var,
        ws: usize,
    },
    WindowMerge {
        a: Var,
        ws: usize,
    },
    Roll {
        a: Var,
        shift_h: isize,
        shift_w: isize,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
    },
    Sum(Var),
    Mean(Var),
    Embedding {
        table: Var,
        indices: Vec<usize>,
    },
    Expand(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a computation for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<(ParamId, Var)>,
    param_index: HashMap<ParamId, Var>,
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients<T> {
    inputs: HashMap<Var, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf created by [`Tape::input`] or [`Tape::param`].
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.inputs.get(&v)
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Adds every parameter gradient into `store` (accumulating).
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) -> Result<()> {
        for (id, g) in &self.params {
            store.accumulate_grad(*id, g.data())?;
        }
        Ok(())
    }
}

/// Broadcast relation between two operand shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    /// Right operand repeats over the leading dims of the left; value is its length.
    Right(usize),
    Left(usize),
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn bcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<(Vec<usize>, Bcast)> {
    if a == b {
        Ok((a.to_vec(), Bcast::Same))
    } else if is_suffix(b, a) {
        Ok((a.to_vec(), Bcast::Right(numel(b))))
    } else if is_suffix(a, b) {
        Ok((b.to_vec(), Bcast::Left(numel(a))))
    } else {
        shape_err(
            op,
            format!("{a:?} vs {b:?} (only leading-dimension broadcast is allowed)"),
        )
    }
}

/// Sums `g` (length a multiple of `inner`) into a buffer of length `inner`.
fn reduce_leading<T: Real>(g: &[T], inner: usize) -> Vec<T> {
    let mut out = vec![T::zero(); inner];
    for chunk in g.chunks(inner) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// `b` is a single matrix shared by every batch row block.
    shared_b: bool,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize], trans_b: bool) -> Result<MatmulDims> {
    const OP: &str = "matmul";
    if a.len() < 2 || b.len() < 2 {
        return shape_err(OP, format!("operands must be at least 2-d, got {a:?} and {b:?}"));
    }
    let k = a[a.len() - 1];
    let (bk, n) = if trans_b {
        (b[b.len() - 1], b[b.len() - 2])
    } else {
        (b[b.len() - 2], b[b.len() - 1])
    };
    if k != bk {
        return shape_err(OP, format!("inner dimensions differ: {a:?} x {b:?}"));
    }
    let mut out_shape = a[..a.len() - 1].to_vec();
    out_shape.push(n);
    if b.len() == 2 {
        let rows = numel(&a[..a.len() - 1]);
        return Ok(MatmulDims {
            batch: 1,
            m: rows,
            k,
            n,
            shared_b: true,
            out_shape,
        });
    }
    if a.len() != b.len() || a[..a.len() - 2] != b[..b.len() - 2] {
        return shape_err(OP, format!("batch dimensions differ: {a:?} x {b:?}"));
    }
    Ok(MatmulDims {
        batch: numel(&a[..a.len() - 2]),
        m: a[a.len() - 2],
        k,
        n,
        shared_b: false,
        out_shape,
    })
}

struct ConvShapes {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    /// im2col geometry over the larger (pixel-side) image.
    geom: ConvGeom,
}

fn conv_shapes(
    op: &'static str,
    x: &[usize],
    w: &[usize],
    bias: Option<&[usize]>,
    stride: usize,
    padding: usize,
    transpose: bool,
) -> Result<ConvShapes> {
    if x.len() != 4 || w.len() != 4 {
        return shape_err(op, format!("expected 4-d input and weight, got {x:?} and {w:?}"));
    }
    if w[2] != w[3] {
        return shape_err(op, format!("only square kernels are supported, got {w:?}"));
    }
    if stride == 0 {
        return invalid(op, "stride must be positive");
    }
    let k = w[2];
    let (batch, cin, h, wd) = (x[0], x[1], x[2], x[3]);
    let (wcin, cout) = if transpose { (w[0], w[1]) } else { (w[1], w[0]) };
    if wcin != cin {
        return shape_err(op, format!("input has {cin} channels, weight expects {wcin}"));
    }
    if let Some(b) = bias {
        if b != [cout] {
            return shape_err(op, format!("bias must be [{cout}], got {b:?}"));
        }
    }
    let geom = if transpose {
        if h == 0 || wd == 0 || (h - 1) * stride + k < 2 * padding + 1 {
            return shape_err(op, format!("input {x:?} too small for kernel {k}"));
        }
        let oh = (h - 1) * stride + k - 2 * padding;
        let ow = (wd - 1) * stride + k - 2 * padding;
        ConvGeom {
            channels: cout,
            in_h: oh,
            in_w: ow,
            kernel: k,
            stride,
            padding,
        }
    } else {
        if h + 2 * padding < k || wd + 2 * padding < k {
            return shape_err(
                op,
                format!("input {x:?} smaller than kernel {k} with padding {padding}"),
            );
        }
        ConvGeom {
            channels: cin,
            in_h: h,
            in_w: wd,
            kernel: k,
            stride,
            padding,
        }
    };
    Ok(ConvShapes {
        batch,
        cin,
        cout,
        h,
        w: wd,
        geom,
    })
}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.kernel == 1 && g.stride == 1 && g.padding == 0
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Brings a parameter onto the tape. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_index.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id), true);
        self.params.push((id, v));
        self.param_index.insert(id, v);
        v
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        make: fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (out_shape, bc) = bcast(op, &sa, &sb)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let data: Vec<T> = match bc {
            Bcast::Same => av.iter().zip(bv).map(|(&x, &y)| f(x, y)).collect(),
            Bcast::Right(inner) => av.iter().enumerate().map(|(i, &x)| f(x, bv[i % inner])).collect(),
            Bcast::Left(inner) => bv.iter().enumerate().map(|(i, &y)| f(av[i % inner], y)).collect(),
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(out_shape, data)?, make(a, b), rg))
    }

    /// Elementwise sum; one operand may repeat over the other's leading dims.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let s = T::of(s);
        let data = self.value(a).data().iter().map(|&x| x * s).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Scale(a, s), rg))
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let d = matmul_dims(self.shape(a), self.shape(b), trans_b)?;
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            let (sa, sb, sc) = (d.m * d.k, if d.shared_b { 0 } else { d.k * d.n }, d.m * d.n);
            for i in 0..d.batch {
                T::gemm(
                    d.m,
                    d.k,
                    d.n,
                    T::one(),
                    &av[i * sa..(i + 1) * sa],
                    false,
                    &bv[i * sb..i * sb + d.k * d.n],
                    trans_b,
                    T::zero(),
                    &mut out[i * sc..(i + 1) * sc],
                );
            }
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(d.out_shape, out)?, Op::Matmul { a, b, trans_b }, rg))
    }

    /// `[..., M, K] x [..., K, N]`, or `[..., K] x [K, N]` with a shared 2-d right operand.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// Like [`Tape::matmul`] with the right operand transposed (`[..., N, K]`).
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    /// 2-d convolution, NCHW input, `[out, in, k, k]` weight.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let cs = conv_shapes(
            "conv2d",
            self.shape(x),
            self.shape(w),
            bshape.as_deref(),
            stride,
            padding,
            false,
        )?;
        let g = cs.geom;
        let (oh, ow) = (g.out_h(), g.out_w());
        let plane_in = cs.cin * cs.h * cs.w;
        let plane_out = cs.cout * oh * ow;
        let mut out = vec![T::zero(); cs.batch * plane_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let mut cols = if is_pointwise(&g) {
                Vec::new()
            } else {
                vec![T::zero(); g.col_rows() * g.col_cols()]
            };
            for bi in 0..cs.batch {
                let xb = &xv[bi * plane_in..(bi + 1) * plane_in];
                let src: &[T] = if is_pointwise(&g) {
                    xb
                } else {
                    kernels::im2col(xb, &g, &mut cols);
                    &cols
                };
                T::gemm(
                    cs.cout,
                    g.col_rows(),
                    oh * ow,
                    T::one(),
                    wv,
                    false,
                    src,
                    false,
                    T::zero(),
                    &mut out[bi * plane_out..(bi + 1) * plane_out],
                );
            }
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for chunk in out.chunks_mut(oh * ow).enumerate() {
                    let c = chunk.0 % cs.cout;
                    chunk.1.iter_mut().for_each(|v| *v += bv[c]);
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![cs.batch, cs.cout, oh, ow], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    /// Transposed 2-d convolution, NCHW input, `[in, out, k, k]` weight.
    /// Output side is `(n - 1) * stride - 2 * padding + k`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let bshape = bias.map(|b| self.shape(b).to_vec());
        let cs = conv_shapes(
            "conv_transpose2d",
            self.shape(x),
            self.shape(w),
            bshape.as_deref(),
            stride,
            padding,
            true,
        )?;
        let g = cs.geom;
        let (oh, ow) = (g.in_h, g.in_w);
        let hw = cs.h * cs.w;
        let plane_in = cs.cin * hw;
        let plane_out = cs.cout * oh * ow;
        let mut out = vec![T::zero(); cs.batch * plane_out];
        {
            let xv = self.value(x).data();
            let wv = self.value(w).data();
            let mut cols = vec![T::zero(); g.col_rows() * hw];
            for bi in 0..cs.batch {
                let xb = &xv[bi * plane_in..(bi + 1) * plane_in];
                T::gemm(
                    g.col_rows(),
                    cs.cin,
                    hw,
                    T::one(),
                    wv,
                    true,
                    xb,
                    false,
                    T::zero(),
                    &mut cols,
                );
                kernels::col2im(&cols, &g, &mut out[bi * plane_out..(bi + 1) * plane_out]);
            }
            if let Some(b) = bias {
                let bv = self.value(b).data();
                for (i, chunk) in out.chunks_mut(oh * ow).enumerate() {
                    let c = i % cs.cout;
                    chunk.iter_mut().for_each(|v| *v += bv[c]);
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || bias.is_some_and(|b| self.rg(b));
        let t = Tensor::new(vec![cs.batch, cs.cout, oh, ow], out)?;
        Ok(self.push(
            t,
            Op::ConvTranspose2d {
                x,
                w,
                bias,
                stride,
                padding,
            },
            rg,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let data = self.value(a).data().iter().map(|&x| f(x)).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, op, rg))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        // NaN passes through so a bad input still shows up in the loss
        self.unary(a, |x| if x < T::zero() { T::zero() } else { x }, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, kernels::gelu, Op::Gelu(a))
    }

    /// Natural logarithm.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, |x| x.ln(), Op::Log(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let Some(&d) = shape.last() else {
            return shape_err("softmax", "scalar input");
        };
        let mut out = self.value(a).data().to_vec();
        if d > 0 {
            for row in out.chunks_mut(d) {
                let mx = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let mut s = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - mx).exp();
                    s += *v;
                }
                let inv = T::one() / s;
                row.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax(a), rg))
    }

    /// Normalises over the last axis, then applies `gamma * x + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some(&d) = shape.last() else {
            return shape_err("layer_norm", "scalar input");
        };
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return shape_err(
                "layer_norm",
                format!(
                    "gamma {:?} / beta {:?} must be [{d}]",
                    self.shape(gamma),
                    self.shape(beta)
                ),
            );
        }
        let rows = numel(&shape) / d.max(1);
        let mut out = vec![T::zero(); numel(&shape)];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        {
            let xv = self.value(x).data();
            let gv = self.value(gamma).data();
            let bv = self.value(beta).data();
            let inv_d = T::one() / T::of(d as f64);
            let eps = T::of(eps);
            for r in 0..rows {
                let row = &xv[r * d..(r + 1) * d];
                let mean = row.iter().copied().sum::<T>() * inv_d;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let rstd = T::one() / (var + eps).sqrt();
                let o = &mut out[r * d..(r + 1) * d];
                for i in 0..d {
                    o[i] = (row[i] - mean) * rstd * gv[i] + bv[i];
                }
                means.push(mean);
                rstds.push(rstd);
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean: means,
                rstd: rstds,
            },
            rg,
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.value(a).numel() {
            return shape_err("reshape", format!("cannot view {:?} as {:?}", self.shape(a), shape));
        }
        let t = Tensor::new(shape.to_vec(), self.value(a).data().to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn transpose(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        if perm.len() != shape.len()
            || perm
                .iter()
                .any(|&p| p >= shape.len() || std::mem::replace(&mut seen[p], true))
        {
            return shape_err(
                "transpose",
                format!("{perm:?} is not a permutation of {} axes", shape.len()),
            );
        }
        let data = kernels::permute(self.value(a).data(), &shape, perm);
        let t = Tensor::new(kernels::permuted_shape(&shape, perm), data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Permute(a, perm.to_vec()), rg))
    }

    /// `[B, H, W, C]` -> `[B * nW, ws * ws, C]` (windows in row-major order).
    pub fn window_partition(&mut self, a: Var, ws: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || ws == 0 || s[1] % ws != 0 || s[2] % ws != 0 {
            return shape_err(
                "window_partition",
                format!("{s:?} not divisible into {ws}x{ws} windows"),
            );
        }
        let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
        let data = kernels::window_partition(self.value(a).data(), b, h, w, c, ws);
        let t = Tensor::new(vec![b * (h / ws) * (w / ws), ws * ws, c], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::WindowPartition { a, ws }, rg))
    }

    /// Inverse of [`Tape::window_partition`] back to `[B, H, W, C]`.
    pub fn window_merge(&mut self, a: Var, ws: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || ws == 0 || h % ws != 0 || w % ws != 0 || s[1] != ws * ws {
            return shape_err(
                "window_merge",
                format!("{s:?} cannot merge into {h}x{w} with window {ws}"),
            );
        }
        let nw = (h / ws) * (w / ws);
        if s[0] % nw != 0 {
            return shape_err("window_merge", format!("{} windows is not a multiple of {nw}", s[0]));
        }
        let (b, c) = (s[0] / nw, s[2]);
        let data = kernels::window_merge(self.value(a).data(), b, h, w, c, ws);
        let t = Tensor::new(vec![b, h, w, c], data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::WindowMerge { a, ws }, rg))
    }

    /// Cyclic shift of `[B, H, W, C]` along the spatial axes.
    pub fn roll(&mut self, a: Var, shift_h: isize, shift_w: isize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return shape_err("roll", format!("expected [B, H, W, C], got {s:?}"));
        }
        let data = kernels::roll2d(self.value(a).data(), s[0], s[1], s[2], s[3], shift_h, shift_w);
        let t = Tensor::new(s, data)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Roll { a, shift_h, shift_w }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return invalid("concat", "no inputs");
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return shape_err("concat", format!("axis {axis} out of range for {base:?}"));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s.iter().zip(&base).enumerate().any(|(i, (x, y))| i != axis && x != y) {
                return shape_err("concat", format!("{s:?} incompatible with {base:?} on axis {axis}"));
            }
            total += s[axis];
        }
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `a[.., start..start+len, ..]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return shape_err(
                "slice",
                format!("{start}..{} out of range on axis {axis} of {s:?}", start + len),
            );
        }
        let outer = numel(&s[..axis]);
        let inner = numel(&s[axis + 1..]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * s[axis] + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::Slice { a, axis, start }, rg))
    }

    /// Sum of all elements (scalar result).
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s), Op::Sum(a), rg))
    }

    /// Mean of all elements (scalar result).
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        if n == 0 {
            return invalid("mean", "empty tensor");
        }
        let s: T = self.value(a).data().iter().copied().sum();
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(s / T::of(n as f64)), Op::Mean(a), rg))
    }

    /// Rows of a `[n, D]` table: output `[indices.len(), D]`.
    pub fn embedding_lookup(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return shape_err("embedding_lookup", format!("table must be 2-d, got {s:?}"));
        }
        let (n, d) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return shape_err("embedding_lookup", format!("index {bad} out of range for {n} rows"));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.rg(table);
        Ok(self.push(
            Tensor::new(vec![indices.len(), d], out)?,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Explicit broadcast: every axis of `a` must equal the target or be 1.
    pub fn expand(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != shape.len() || s.iter().zip(shape).any(|(&x, &y)| x != y && x != 1) {
            return shape_err("expand", format!("cannot expand {s:?} to {shape:?}"));
        }
        let src_strides = kernels::row_major_strides(&s);
        let strides: Vec<usize> = s
            .iter()
            .zip(&src_strides)
            .map(|(&d, &st)| if d == 1 { 0 } else { st })
            .collect();
        let src = self.value(a).data();
        let n = numel(shape);
        let mut out = Vec::with_capacity(n);
        let mut idx = vec![0usize; shape.len()];
        let mut off = 0usize;
        for _ in 0..n {
            out.push(src[off]);
            let mut ax = shape.len();
            while ax > 0 {
                ax -= 1;
                idx[ax] += 1;
                off += strides[ax];
                if idx[ax] < shape[ax] {
                    break;
                }
                off -= strides[ax] * shape[ax];
                idx[ax] = 0;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape.to_vec(), out)?, Op::Expand(a), rg))
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Parameter gradients are returned, not applied; see
    /// [`Gradients::accumulate_into`].
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut inputs = HashMap::new();
        let mut params = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Constant => {}
                Op::Input => {
                    inputs.insert(Var(i), Tensor::new(node.value.shape().to_vec(), g)?);
                }
                Op::Param(id) => {
                    params.push((*id, Tensor::new(node.value.shape().to_vec(), g)?));
                }
                op => self.backprop(op, &node.value, &g, &mut grads)?,
            }
        }
        params.sort_by_key(|(id, _)| *id);
        Ok(Gradients { inputs, params })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.rg(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let buf = grads[v.0].get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        match op {
            Op::Constant | Op::Input | Op::Param(_) => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -T::one() } else { T::one() };
                let (_, bc) = bcast("add", self.shape(*a), self.shape(*b))?;
                let (ga, gb) = match bc {
                    Bcast::Same => (g.to_vec(), g.to_vec()),
                    Bcast::Right(inner) => (g.to_vec(), reduce_leading(g, inner)),
                    Bcast::Left(inner) => (reduce_leading(g, inner), g.to_vec()),
                };
                self.accumulate(grads, *a, |buf| add_into(buf, &ga));
                self.accumulate(grads, *b, |buf| {
                    for (d, &s) in buf.iter_mut().zip(&gb) {
                        *d += sign * s;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (_, bc) = bcast("mul", self.shape(*a), self.shape(*b))?;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let n = g.len();
                if self.rg(*a) {
                    let prod: Vec<T> = match bc {
                        Bcast::Same => g.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
                        Bcast::Right(inner) => (0..n).map(|i| g[i] * bv[i % inner]).collect(),
                        Bcast::Left(inner) => {
                            let full: Vec<T> = (0..n).map(|i| g[i] * bv[i]).collect();
                            reduce_leading(&full, inner)
                        }
                    };
                    self.accumulate(grads, *a, |buf| add_into(buf, &prod));
                }
                if self.rg(*b) {
                    let prod: Vec<T> = match bc {
                        Bcast::Same => g.iter().zip(av).map(|(&x, &y)| x * y).collect(),
                        Bcast::Left(inner) => (0..n).map(|i| g[i] * av[i % inner]).collect(),
                        Bcast::Right(inner) => {
                            let full: Vec<T> = (0..n).map(|i| g[i] * av[i]).collect();
                            reduce_leading(&full, inner)
                        }
                    };
                    self.accumulate(grads, *b, |buf| add_into(buf, &prod));
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, |buf| {
                    for (d, &x) in buf.iter_mut().zip(g) {
                        *d += s * x;
                    }
                });
            }
            Op::Matmul { a, b, trans_b } => {
                let d = matmul_dims(self.shape(*a), self.shape(*b), *trans_b)?;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let (sa, sb, sc) = (d.m * d.k, if d.shared_b { 0 } else { d.k * d.n }, d.m * d.n);
                if self.rg(*a) {
                    self.accumulate(grads, *a, |buf| {
                        for i in 0..d.batch {
                            let gi = &g[i * sc..(i + 1) * sc];
                            let bi = &bv[i * sb..i * sb + d.k * d.n];
                            // dA = dC * op(B)^T
                            T::gemm(
                                d.m,
                                d.n,
                                d.k,
                                T::one(),
                                gi,
                                false,
                                bi,
                                !*trans_b,
                                T::one(),
                                &mut buf[i * sa..(i + 1) * sa],
                            );
                        }
                    });
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, |buf| {
                        for i in 0..d.batch {
                            let gi = &g[i * sc..(i + 1) * sc];
                            let ai = &av[i * sa..(i + 1) * sa];
                            let dst = &mut buf[i * sb..i * sb + d.k * d.n];
                            if *trans_b {
                                // dB[n, k] = dC^T A
                                T::gemm(d.n, d.m, d.k, T::one(), gi, true, ai, false, T::one(), dst);
                            } else {
                                // dB[k, n] = A^T dC
                                T::gemm(d.k, d.m, d.n, T::one(), ai, true, gi, false, T::one(), dst);
                            }
                        }
                    });
                }
            }
            Op::Conv2d {
                x,
                w,
                bias,
                stride,
                padding,
            } => {
                let bshape = bias.map(|b| self.shape(b).to_vec());
                let cs = conv_shapes(
                    "conv2d",
                    self.shape(*x),
                    self.shape(*w),
                    bshape.as_deref(),
                    *stride,
                    *padding,
                    false,
                )?;
                let geo = cs.geom;
                let ohw = geo.out_h() * geo.out_w();
                let plane_in = cs.cin * cs.h * cs.w;
                let plane_out = cs.cout * ohw;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let pointwise = is_pointwise(&geo);
                let mut cols = vec![T::zero(); if pointwise { 0 } else { geo.col_rows() * ohw }];
                if self.rg(*w) {
                    self.accumulate(grads, *w, |buf| {
                        for bi in 0..cs.batch {
                            let xb = &xv[bi * plane_in..(bi + 1) * plane_in];
                            let src: &[T] = if pointwise {
                                xb
                            } else {
                                kernels::im2col(xb, &geo, &mut cols);
                                &cols
                            };
                            let gb = &g[bi * plane_out..(bi + 1) * plane_out];
                            T::gemm(
                                cs.cout,
                                ohw,
                                geo.col_rows(),
                                T::one(),
                                gb,
                                false,
                                src,
                                true,
                                T::one(),
                                buf,
                            );
                        }
                    });
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); geo.col_rows() * ohw];
                    self.accumulate(grads, *x, |buf| {
                        for bi in 0..cs.batch {
                            let gb = &g[bi * plane_out..(bi + 1) * plane_out];
                            let dst = &mut buf[bi * plane_in..(bi + 1) * plane_in];
                            if pointwise {
                                T::gemm(
                                    geo.col_rows(),
                                    cs.cout,
                                    ohw,
                                    T::one(),
                                    wv,
                                    true,
                                    gb,
                                    false,
                                    T::one(),
                                    dst,
                                );
                            } else {
                                T::gemm(
                                    geo.col_rows(),
                                    cs.cout,
                                    ohw,
                                    T::one(),
                                    wv,
                                    true,
                                    gb,
                                    false,
                                    T::zero(),
                                    &mut dcols,
                                );
                                kernels::col2im(&dcols, &geo, dst);
                            }
                        }
                    });
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |buf| {
                        for (i, chunk) in g.chunks(ohw).enumerate() {
                            buf[i % cs.cout] += chunk.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::ConvTranspose2d {
                x,
                w,
                bias,
                stride,
                padding,
            } => {
                let bshape = bias.map(|b| self.shape(b).to_vec());
                let cs = conv_shapes(
                    "conv_transpose2d",
                    self.shape(*x),
                    self.shape(*w),
                    bshape.as_deref(),
                    *stride,
                    *padding,
                    true,
                )?;
                let geo = cs.geom;
                let hw = cs.h * cs.w;
                let ohw = geo.in_h * geo.in_w;
                let plane_in = cs.cin * hw;
                let plane_out = cs.cout * ohw;
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                // columns of the output gradient, one batch item at a time
                let mut dcols = vec![T::zero(); geo.col_rows() * hw];
                let need_w = self.rg(*w);
                let need_x = self.rg(*x);
                let mut gw = if need_w {
                    vec![T::zero(); numel(self.shape(*w))]
                } else {
                    Vec::new()
                };
                let mut gx = if need_x {
                    vec![T::zero(); numel(self.shape(*x))]
                } else {
                    Vec::new()
                };
                if need_w || need_x {
                    for bi in 0..cs.batch {
                        kernels::im2col(&g[bi * plane_out..(bi + 1) * plane_out], &geo, &mut dcols);
                        if need_x {
                            T::gemm(
                                cs.cin,
                                geo.col_rows(),
                                hw,
                                T::one(),
                                wv,
                                false,
                                &dcols,
                                false,
                                T::one(),
                                &mut gx[bi * plane_in..(bi + 1) * plane_in],
                            );
                        }
                        if need_w {
                            let xb = &xv[bi * plane_in..(bi + 1) * plane_in];
                            T::gemm(
                                cs.cin,
                                hw,
                                geo.col_rows(),
                                T::one(),
                                xb,
                                false,
                                &dcols,
                                true,
                                T::one(),
                                &mut gw,
                            );
                        }
                    }
                }
                if need_w {
                    self.accumulate(grads, *w, |buf| add_into(buf, &gw));
                }
                if need_x {
                    self.accumulate(grads, *x, |buf| add_into(buf, &gx));
                }
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |buf| {
                        for (i, chunk) in g.chunks(ohw).enumerate() {
                            buf[i % cs.cout] += chunk.iter().copied().sum::<T>();
                        }
                    });
                }
            }
            Op::Relu(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        if xv[i] > T::zero() {
                            buf[i] += g[i];
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] * kernels::gelu_grad(xv[i]);
                    }
                });
            }
            Op::Log(a) => {
                let xv = self.value(*a).data();
                self.accumulate(grads, *a, |buf| {
                    for i in 0..buf.len() {
                        buf[i] += g[i] / xv[i];
                    }
                });
            }
            Op::Softmax(a) => {
                let y = out.data();
                let d = *out.shape().last().unwrap_or(&1);
                self.accumulate(grads, *a, |buf| {
                    for ((yr, gr), br) in y.chunks(d).zip(g.chunks(d)).zip(buf.chunks_mut(d)) {
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for i in 0..d {
                            br[i] += yr[i] * (gr[i] - dot);
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                mean,
                rstd,
            } => {
                let xv = self.value(*x).data();
                let gv = self.value(*gamma).data();
                let d = gv.len();
                let rows = mean.len();
                let xhat = |r: usize, i: usize| (xv[r * d + i] - mean[r]) * rstd[r];
                if self.rg(*gamma) || self.rg(*beta) {
                    let mut dg = vec![T::zero(); d];
                    let mut db = vec![T::zero(); d];
                    for r in 0..rows {
                        for i in 0..d {
                            let gi = g[r * d + i];
                            dg[i] += gi * xhat(r, i);
                            db[i] += gi;
                        }
                    }
                    self.accumulate(grads, *gamma, |buf| add_into(buf, &dg));
                    self.accumulate(grads, *beta, |buf| add_into(buf, &db));
                }
                if self.rg(*x) {
                    let inv_d = T::one() / T::of(d as f64);
                    self.accumulate(grads, *x, |buf| {
                        for r in 0..rows {
                            let mut s1 = T::zero();
                            let mut s2 = T::zero();
                            for i in 0..d {
                                let dxh = g[r * d + i] * gv[i];
                                s1 += dxh;
                                s2 += dxh * xhat(r, i);
                            }
                            for i in 0..d {
                                let dxh = g[r * d + i] * gv[i];
                                buf[r * d + i] += rstd[r] * (dxh - inv_d * s1 - xhat(r, i) * inv_d * s2);
                            }
                        }
                    });
                }
            }
            Op::Reshape(a) => {
                self.accumulate(grads, *a, |buf| add_into(buf, g));
            }
            Op::Permute(a, perm) => {
                let back = kernels::permute(g, out.shape(), &kernels::inverse_perm(perm));
                self.accumulate(grads, *a, |buf| add_into(buf, &back));
            }
            Op::WindowPartition { a, ws } => {
                let s = self.shape(*a);
                let back = kernels::window_merge(g, s[0], s[1], s[2], s[3], *ws);
                self.accumulate(grads, *a, |buf| add_into(buf, &back));
            }
            Op::WindowMerge { a, ws } => {
                let s = out.shape();
                let back = kernels::window_partition(g, s[0], s[1], s[2], s[3], *ws);
                self.accumulate(grads, *a, |buf| add_into(buf, &back));
            }
            Op::Roll { a, shift_h, shift_w } => {
                let s = out.shape();
                let back = kernels::roll2d(g, s[0], s[1], s[2], s[3], -shift_h, -shift_w);
                self.accumulate(grads, *a, |buf| add_into(buf, &back));
            }
            Op::Concat { inputs, axis } => {
                let s = out.shape();
                let outer = numel(&s[..*axis]);
                let inner = numel(&s[*axis + 1..]);
                let total = s[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    self.accumulate(grads, v, |buf| {
                        for o in 0..outer {
                            add_into(
                                &mut buf[o * len..(o + 1) * len],
                                &g[o * total + offset..o * total + offset + len],
                            );
                        }
                    });
                    offset += len;
                }
            }
            Op::Slice { a, axis, start } => {
                let s = self.shape(*a);
                let outer = numel(&s[..*axis]);
                let inner = numel(&s[*axis + 1..]);
                let full = s[*axis] * inner;
                let len = out.shape()[*axis] * inner;
                self.accumulate(grads, *a, |buf| {
                    for o in 0..outer {
                        let base = o * full + start * inner;
                        add_into(&mut buf[base..base + len], &g[o * len..(o + 1) * len]);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                self.accumulate(grads, *a, |buf| buf.iter_mut().for_each(|v| *v += g0));
            }
            Op::Mean(a) => {
                let n = self.value(*a).numel();
                let g0 = g[0] / T::of(n as f64);
                self.accumulate(grads, *a, |buf| buf.iter_mut().for_each(|v| *v += g0));
            }
            Op::Embedding { table, indices } => {
                let d = self.shape(*table)[1];
                self.accumulate(grads, *table, |buf| {
                    for (row, &i) in indices.iter().enumerate() {
                        add_into(&mut buf[i * d..(i + 1) * d], &g[row * d..(row + 1) * d]);
                    }
                });
            }
            Op::Expand(a) => {
                let s = self.shape(*a).to_vec();
                let target = out.shape();
                let src_strides = kernels::row_major_strides(&s);
                let strides: Vec<usize> = s
                    .iter()
                    .zip(&src_strides)
                    .map(|(&d, &st)| if d == 1 { 0 } else { st })
                    .collect();
                self.accumulate(grads, *a, |buf| {
                    let mut idx = vec![0usize; target.len()];
                    let mut off = 0usize;
                    for &gv in g {
                        buf[off] += gv;
                        let mut ax = target.len();
                        while ax > 0 {
                            ax -= 1;
                            idx[ax] += 1;
                            off += strides[ax];
                            if idx[ax] < target[ax] {
                                break;
                            }
                            off -= strides[ax] * target[ax];
                            idx[ax] = 0;
                        }
                    }
                });
            }
        }
        Ok(())
    }
}
