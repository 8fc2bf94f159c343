//! Window pooling.
//!
//! `pool2d` is the fixed 2x2/stride-2 operation used by the downsampling
//! variants; the stem's 3x3/stride-2 max pool goes through the general
//! window form. Max pooling routes its gradient to the first occurrence
//! of the maximum in row-major window order.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    Sum,
}

impl PoolKind {
    pub fn label(self) -> &'static str {
        match self {
            PoolKind::Max => "max",
            PoolKind::Avg => "avg",
            PoolKind::Sum => "sum",
        }
    }
}

/// Saved forward state for the backward pass.
#[derive(Debug, Clone)]
pub struct PoolCache {
    kind: PoolKind,
    input_shape: Shape,
    out_shape: Shape,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    /// Flat input index of the winning element per output, max pooling only.
    argmax: Vec<usize>,
}

/// General window pooling. Max windows ignore out-of-bounds taps; avg and
/// sum treat them as zero (the engine only uses avg/sum unpadded).
pub fn window_pool_forward<S: Scalar>(
    x: &Tensor4<S>,
    kind: PoolKind,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor4<S>, PoolCache)> {
    let s = x.shape();
    let (kh, kw) = kernel;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    if s.h + 2 * ph < kh || s.w + 2 * pw < kw {
        return Err(Error::Dimension(format!(
            "pool kernel ({kh}, {kw}) larger than padded input {s}"
        )));
    }
    let oh = (s.h + 2 * ph - kh) / sh + 1;
    let ow = (s.w + 2 * pw - kw) / sw + 1;
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = Tensor4::zeros(out_shape);
    let mut argmax = Vec::new();
    if kind == PoolKind::Max {
        argmax.resize(out_shape.numel(), 0usize);
    }
    let window = S::from_usize(kh * kw);
    for i in 0..s.n {
        for j in 0..s.c {
            for op in 0..oh {
                for oq in 0..ow {
                    let mut best = S::ZERO;
                    let mut best_idx = usize::MAX;
                    let mut acc = S::ZERO;
                    for u in 0..kh {
                        let iy = (op * sh + u) as isize - ph as isize;
                        if iy < 0 || iy >= s.h as isize {
                            continue;
                        }
                        for v in 0..kw {
                            let ix = (oq * sw + v) as isize - pw as isize;
                            if ix < 0 || ix >= s.w as isize {
                                continue;
                            }
                            let val = x.at(i, j, iy as usize, ix as usize);
                            match kind {
                                PoolKind::Max => {
                                    if best_idx == usize::MAX || val > best {
                                        best = val;
                                        best_idx = s.index(i, j, iy as usize, ix as usize);
                                    }
                                }
                                PoolKind::Avg | PoolKind::Sum => acc += val,
                            }
                        }
                    }
                    let out_idx = out_shape.index(i, j, op, oq);
                    match kind {
                        PoolKind::Max => {
                            out.data_mut()[out_idx] = best;
                            argmax[out_idx] = best_idx;
                        }
                        PoolKind::Avg => out.data_mut()[out_idx] = acc / window,
                        PoolKind::Sum => out.data_mut()[out_idx] = acc,
                    }
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            kind,
            input_shape: s,
            out_shape,
            kernel,
            stride,
            padding,
            argmax,
        },
    ))
}

/// The 2x2/stride-2 pooling used at stage transitions; requires even
/// spatial dims.
pub fn pool2d_forward<S: Scalar>(x: &Tensor4<S>, kind: PoolKind) -> Result<(Tensor4<S>, PoolCache)> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "2x2 pooling needs even spatial dims, got {s}"
        )));
    }
    window_pool_forward(x, kind, (2, 2), (2, 2), (0, 0))
}

pub fn pool_backward<S: Scalar>(cache: &PoolCache, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
    if grad_out.shape() != cache.out_shape {
        return Err(Error::Dimension(format!(
            "grad shape {} does not match pool output {}",
            grad_out.shape(),
            cache.out_shape
        )));
    }
    let s = cache.input_shape;
    let mut grad_x = Tensor4::zeros(s);
    match cache.kind {
        PoolKind::Max => {
            for (out_idx, &src) in cache.argmax.iter().enumerate() {
                grad_x.data_mut()[src] += grad_out.data()[out_idx];
            }
        }
        PoolKind::Avg | PoolKind::Sum => {
            let (kh, kw) = cache.kernel;
            let (sh, sw) = cache.stride;
            let (ph, pw) = cache.padding;
            let o = cache.out_shape;
            let window = S::from_usize(kh * kw);
            for i in 0..o.n {
                for j in 0..o.c {
                    for op in 0..o.h {
                        for oq in 0..o.w {
                            let mut g = grad_out.at(i, j, op, oq);
                            if cache.kind == PoolKind::Avg {
                                g /= window;
                            }
                            for u in 0..kh {
                                let iy = (op * sh + u) as isize - ph as isize;
                                if iy < 0 || iy >= s.h as isize {
                                    continue;
                                }
                                for v in 0..kw {
                                    let ix = (oq * sw + v) as isize - pw as isize;
                                    if ix >= 0 && ix < s.w as isize {
                                        *grad_x.at_mut(i, j, iy as usize, ix as usize) += g;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(grad_x)
}
