//! Raw array kernels shared by the forward and backward passes.

use crate::Real;

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// Output shape of permuting `shape` so that output axis `i` is input axis `perm[i]`.
pub(crate) fn permuted_shape(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    perm.iter().map(|&p| shape[p]).collect()
}

pub(crate) fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Copies `src` (shape `shape`) into a new buffer laid out as `permute(shape, perm)`.
pub(crate) fn permute<T: Copy + Default>(src: &[T], shape: &[usize], perm: &[usize]) -> Vec<T> {
    let nd = shape.len();
    let mut out = vec![T::default(); src.len()];
    if src.is_empty() {
        return out;
    }
    if nd == 0 || perm.iter().enumerate().all(|(i, &p)| i == p) {
        out.copy_from_slice(src);
        return out;
    }
    let in_strides = row_major_strides(shape);
    let out_shape = permuted_shape(shape, perm);
    // stride in the source for each output axis
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    // Copy contiguous runs when the innermost axis is preserved.
    let inner_contig = perm[nd - 1] == nd - 1;
    let (outer_nd, run) = if inner_contig {
        (nd - 1, out_shape[nd - 1])
    } else {
        (nd, 1)
    };
    let mut idx = vec![0usize; outer_nd];
    let mut src_off = 0usize;
    let mut dst = 0usize;
    let total_runs = src.len() / run;
    for _ in 0..total_runs {
        if inner_contig {
            out[dst..dst + run].copy_from_slice(&src[src_off..src_off + run]);
        } else {
            out[dst] = src[src_off];
        }
        dst += run;
        // odometer increment over the outer axes
        let mut ax = outer_nd;
        while ax > 0 {
            ax -= 1;
            idx[ax] += 1;
            src_off += src_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src_off -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Convolution geometry for one square kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_h() * self.out_w()
    }
}

/// Gathers sliding patches of `x` (`channels x in_h x in_w`) into a
/// `(channels*k*k) x (out_h*out_w)` matrix. Padding reads as zero.
pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let xc = &x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - g.padding as isize;
                    let drow = &mut dst[y * ow..(y + 1) * ow];
                    if iy < 0 || iy as usize >= g.in_h {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    for (xo, d) in drow.iter_mut().enumerate() {
                        let ix = (xo * g.stride + kj) as isize - g.padding as isize;
                        *d = if ix < 0 || ix as usize >= g.in_w {
                            T::zero()
                        } else {
                            srow[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into `x`.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let (oh, ow) = (g.out_h(), g.out_w());
    let k = g.kernel;
    let plane = g.in_h * g.in_w;
    for c in 0..g.channels {
        let xc = &mut x[c * plane..(c + 1) * plane];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for y in 0..oh {
                    let iy = (y * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy as usize >= g.in_h {
                        continue;
                    }
                    let drow = &mut xc[iy as usize * g.in_w..(iy as usize + 1) * g.in_w];
                    let srow = &src[y * ow..(y + 1) * ow];
                    for (xo, &s) in srow.iter().enumerate() {
                        let ix = (xo * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && (ix as usize) < g.in_w {
                            drow[ix as usize] += s;
                        }
                    }
                }
            }
        }
    }
}

/// `[B, H, W, C]` -> `[B * (H/ws) * (W/ws), ws*ws, C]`.
pub(crate) fn window_partition<T: Copy + Default>(
    x: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    ws: usize,
) -> Vec<T> {
    // [B, nh, ws, nw, ws, C] -> [B, nh, nw, ws, ws, C]
    permute(x, &[b, h / ws, ws, w / ws, ws, c], &[0, 1, 3, 2, 4, 5])
}

/// Inverse of [`window_partition`].
pub(crate) fn window_merge<T: Copy + Default>(x: &[T], b: usize, h: usize, w: usize, c: usize, ws: usize) -> Vec<T> {
    permute(x, &[b, h / ws, w / ws, ws, ws, c], &[0, 1, 3, 2, 4, 5])
}

/// Cyclic shift of `[B, H, W, C]` along H and W: `out[i] = x[i - shift]`.
pub(crate) fn roll2d<T: Copy + Default>(
    x: &[T],
    b: usize,
    h: usize,
    w: usize,
    c: usize,
    shift_h: isize,
    shift_w: isize,
) -> Vec<T> {
    let mut out = vec![T::default(); x.len()];
    let sh = shift_h.rem_euclid(h as isize) as usize;
    let sw = shift_w.rem_euclid(w as isize) as usize;
    for bi in 0..b {
        let base = bi * h * w * c;
        for i in 0..h {
            let oi = (i + sh) % h;
            for j in 0..w {
                let oj = (j + sw) % w;
                let src = base + (i * w + j) * c;
                let dst = base + (oi * w + oj) * c;
                out[dst..dst + c].copy_from_slice(&x[src..src + c]);
            }
        }
    }
    out
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let k = T::of(GELU_K);
    let c = T::of(GELU_C);
    let half = T::of(0.5);
    let inner = k * (x + c * x * x * x);
    let t = inner.tanh();
    let dinner = k * (T::one() + T::of(3.0) * c * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permute_matches_index_formula() {
        let shape = [2, 3, 4];
        let src: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let perm = [2, 0, 1];
        let out = permute(&src, &shape, &perm);
        // out[k, i, j] = src[i, j, k]
        for i in 0..2 {
            for j in 0..3 {
                for k in 0..4 {
                    assert_eq!(out[(k * 2 + i) * 3 + j], src[(i * 3 + j) * 4 + k]);
                }
            }
        }
        let back = permute(&out, &permuted_shape(&shape, &perm), &inverse_perm(&perm));
        assert_eq!(back, src);
    }

    #[test]
    fn permute_with_contiguous_inner_axis() {
        let shape = [2, 3, 2];
        let src: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let out = permute(&src, &shape, &[1, 0, 2]);
        assert_eq!(&out[..4], &[0.0, 1.0, 6.0, 7.0]);
    }

    #[test]
    fn conv_output_size() {
        let g = ConvGeom {
            channels: 1,
            in_h: 256,
            in_w: 256,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        assert_eq!((g.out_h(), g.out_w()), (256, 256));
        let g2 = ConvGeom { stride: 2, ..g };
        assert_eq!(g2.out_h(), 128);
    }

    #[test]
    fn roll_then_unroll_is_identity() {
        let x: Vec<f64> = (0..2 * 4 * 4 * 3).map(|v| v as f64).collect();
        let r = roll2d(&x, 2, 4, 4, 3, -2, -2);
        assert_ne!(r, x);
        assert_eq!(roll2d(&r, 2, 4, 4, 3, 2, 2), x);
    }
}
