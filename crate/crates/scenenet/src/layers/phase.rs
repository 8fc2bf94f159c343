//! Spatial phase decomposition and the dilated pooling downsampler.
//!
//! A feature map with even spatial dims splits losslessly into four
//! sub-grids, one per (row parity, column parity). Dilated pooling runs
//! one shared stride-1 convolution over each sub-grid and sums the four
//! results, halving resolution without discarding any spatial samples;
//! because convolution is linear, this equals convolving the 2x2
//! sum-pooled map, which is what keeps its cost at parity with the
//! strided convolution it replaces.

use crate::error::{Error, Result};
use crate::layers::conv::{conv_backward_raw, conv_forward_raw, ConvGrads, ConvParams, ConvRef};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// The four even/odd row x even/odd column sub-grids of a source tensor.
/// `grids[2*i + j]` holds `x[.., .., 2p+i, 2q+j]`.
#[derive(Debug, Clone)]
pub struct PhaseGrids<S: Scalar> {
    pub grids: [Tensor4<S>; 4],
}

fn require_even(shape: Shape, op: &str) -> Result<()> {
    if shape.h % 2 != 0 || shape.w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "{op} needs even spatial dims, got {shape}"
        )));
    }
    Ok(())
}

/// Splits into the four phase sub-grids; lossless for even dims.
pub fn phase_decompose<S: Scalar>(x: &Tensor4<S>) -> Result<PhaseGrids<S>> {
    let s = x.shape();
    require_even(s, "phase decomposition")?;
    let half = Shape::new(s.n, s.c, s.h / 2, s.w / 2);
    let build = |ri: usize, cj: usize| {
        Tensor4::from_fn(half, |i, j, p, q| x.at(i, j, 2 * p + ri, 2 * q + cj))
    };
    Ok(PhaseGrids {
        grids: [build(0, 0), build(0, 1), build(1, 0), build(1, 1)],
    })
}

/// Exact inverse of [`phase_decompose`].
pub fn phase_reassemble<S: Scalar>(grids: &PhaseGrids<S>) -> Result<Tensor4<S>> {
    let half = grids.grids[0].shape();
    for g in &grids.grids[1..] {
        if g.shape() != half {
            return Err(Error::Dimension(format!(
                "phase grids disagree: {} vs {}",
                half,
                g.shape()
            )));
        }
    }
    let full = Shape::new(half.n, half.c, half.h * 2, half.w * 2);
    Ok(Tensor4::from_fn(full, |i, j, k, l| {
        grids.grids[2 * (k % 2) + (l % 2)].at(i, j, k / 2, l / 2)
    }))
}

fn check_dp_params<S: Scalar>(x: &Tensor4<S>, p: &ConvParams<S>) -> Result<()> {
    require_even(x.shape(), "dilated pooling")?;
    if p.stride != (1, 1) {
        return Err(Error::Dimension(format!(
            "dilated pooling requires stride (1, 1), got ({}, {})",
            p.stride.0, p.stride.1
        )));
    }
    let (kh, kw) = p.kernel();
    if p.padding != (kh / 2, kw / 2) {
        return Err(Error::Dimension(format!(
            "dilated pooling requires half-kernel padding ({}, {}), got ({}, {})",
            kh / 2,
            kw / 2,
            p.padding.0,
            p.padding.1
        )));
    }
    Ok(())
}

/// Forward pass: one shared convolution over each of the four phase
/// sub-grids, summed. Output spatial dims are halved. Bias, when present,
/// is added once after the summation so the sum-pool identity holds.
pub fn dilated_pooling_forward<S: Scalar>(x: &Tensor4<S>, p: &ConvParams<S>) -> Result<Tensor4<S>> {
    check_dp_params(x, p)?;
    let grids = phase_decompose(x)?;
    let branch_ref = ConvRef {
        weights: &p.weights,
        stride: p.stride,
        padding: p.padding,
        bias: None,
    };
    let mut out: Option<Tensor4<S>> = None;
    for g in &grids.grids {
        let branch = conv_forward_raw(g, branch_ref)?;
        out = Some(match out {
            None => branch,
            Some(acc) => acc.add(&branch)?,
        });
    }
    let mut out = out.expect("four branches");
    if let Some(bias) = &p.bias {
        let s = out.shape();
        for i in 0..s.n {
            for (o, &b) in bias.iter().enumerate() {
                for k in 0..s.h {
                    for l in 0..s.w {
                        *out.at_mut(i, o, k, l) += b;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward pass. The four branches share the weight tensor, so the
/// weight gradient is the sum over branches; the input gradient is the
/// reassembly of the per-branch input gradients.
pub fn dilated_pooling_backward<S: Scalar>(
    x: &Tensor4<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    check_dp_params(x, p)?;
    let grids = phase_decompose(x)?;
    let branch_ref = ConvRef {
        weights: &p.weights,
        stride: p.stride,
        padding: p.padding,
        bias: None,
    };
    let mut grad_w = Tensor4::zeros(p.weights.shape());
    let mut branch_inputs = Vec::with_capacity(4);
    for g in &grids.grids {
        let grads = conv_backward_raw(g, branch_ref, grad_out)?;
        grad_w.add_scaled(&grads.weights, S::ONE)?;
        branch_inputs.push(grads.input);
    }
    let grad_x = phase_reassemble(&PhaseGrids {
        grids: [
            branch_inputs[0].clone(),
            branch_inputs[1].clone(),
            branch_inputs[2].clone(),
            branch_inputs[3].clone(),
        ],
    })?;
    let grad_b = p.bias.as_ref().map(|b| {
        let s = grad_out.shape();
        let mut gb = vec![S::ZERO; b.len()];
        for i in 0..s.n {
            for (o, g) in gb.iter_mut().enumerate() {
                for k in 0..s.h {
                    for l in 0..s.w {
                        *g += grad_out.at(i, o, k, l);
                    }
                }
            }
        }
        gb
    });
    Ok(ConvGrads {
        input: grad_x,
        weights: grad_w,
        bias: grad_b,
    })
}
