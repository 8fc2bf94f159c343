//! 2-D convolution, forward and backward.
//!
//! The compute path lowers each sample to a column matrix (im2col) and
//! runs the shared matrix kernels; gradients come back through the same
//! lowering. Correctness is checked against a direct nested-loop oracle
//! in the tests.

use crate::error::{Error, Result};
use crate::layers::matmul::{acc_a_b, acc_a_bt, acc_at_b};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// Convolution weights plus geometry. Weights are (out_c, in_c, kh, kw);
/// bias, when present, has one entry per output channel.
#[derive(Debug, Clone)]
pub struct ConvParams<S: Scalar> {
    pub weights: Tensor4<S>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: Option<Vec<S>>,
}

impl<S: Scalar> ConvParams<S> {
    pub fn new(
        weights: Tensor4<S>,
        stride: (usize, usize),
        padding: (usize, usize),
        bias: Option<Vec<S>>,
    ) -> Result<ConvParams<S>> {
        if stride.0 < 1 || stride.1 < 1 {
            return Err(Error::Dimension(format!(
                "stride must be >= 1, got ({}, {})",
                stride.0, stride.1
            )));
        }
        if let Some(b) = &bias {
            if b.len() != weights.shape().n {
                return Err(Error::Dimension(format!(
                    "bias length {} does not match {} output channels",
                    b.len(),
                    weights.shape().n
                )));
            }
        }
        Ok(ConvParams {
            weights,
            stride,
            padding,
            bias,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape().n
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape().h, self.weights.shape().w)
    }

    /// Output shape for a given input, or a dimension error when channels
    /// mismatch or the output would be empty.
    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        ConvRef::from_params(self).output_shape(input)
    }
}

/// Borrowed view of convolution parameters, so the network layers can run
/// the kernels without cloning weight tensors.
#[derive(Clone, Copy)]
pub(crate) struct ConvRef<'a, S: Scalar> {
    pub weights: &'a Tensor4<S>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub bias: Option<&'a [S]>,
}

impl<'a, S: Scalar> ConvRef<'a, S> {
    pub(crate) fn from_params(p: &'a ConvParams<S>) -> ConvRef<'a, S> {
        ConvRef {
            weights: &p.weights,
            stride: p.stride,
            padding: p.padding,
            bias: p.bias.as_deref(),
        }
    }

    fn kernel(&self) -> (usize, usize) {
        (self.weights.shape().h, self.weights.shape().w)
    }

    pub(crate) fn output_shape(&self, input: Shape) -> Result<Shape> {
        if input.c != self.weights.shape().c {
            return Err(Error::Dimension(format!(
                "input has {} channels, kernel expects {} (input {input}, weights {})",
                input.c,
                self.weights.shape().c,
                self.weights.shape()
            )));
        }
        let (kh, kw) = self.kernel();
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        let padded_h = input.h + 2 * ph;
        let padded_w = input.w + 2 * pw;
        if padded_h < kh || padded_w < kw {
            return Err(Error::Dimension(format!(
                "kernel ({kh}, {kw}) larger than padded input ({padded_h}, {padded_w})"
            )));
        }
        let oh = (padded_h - kh) / sh + 1;
        let ow = (padded_w - kw) / sw + 1;
        Ok(Shape::new(input.n, self.weights.shape().n, oh, ow))
    }
}

/// Fills `cols` (in_c*kh*kw rows by oh*ow columns) with the lowered
/// receptive fields of one sample; out-of-bounds taps are zero.
fn im2col<S: Scalar>(x: &Tensor4<S>, sample: usize, p: ConvRef<'_, S>, out_shape: Shape, cols: &mut [S]) {
    let input = x.shape();
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let cols_w = oh * ow;
    let x_data = x.data();
    let sample_base = sample * input.c * input.h * input.w;
    for c in 0..input.c {
        let chan_base = sample_base + c * input.h * input.w;
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * cols_w;
                for op in 0..oh {
                    let iy = (op * sh + u) as isize - ph as isize;
                    let row_out = row + op * ow;
                    if iy < 0 || iy >= input.h as isize {
                        cols[row_out..row_out + ow].fill(S::ZERO);
                        continue;
                    }
                    let src_row = chan_base + iy as usize * input.w;
                    for oq in 0..ow {
                        let ix = (oq * sw + v) as isize - pw as isize;
                        cols[row_out + oq] = if ix < 0 || ix >= input.w as isize {
                            S::ZERO
                        } else {
                            x_data[src_row + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto one input sample.
fn col2im_add<S: Scalar>(
    cols: &[S],
    sample: usize,
    p: ConvRef<'_, S>,
    out_shape: Shape,
    grad_x: &mut Tensor4<S>,
) {
    let input = grad_x.shape();
    let (kh, kw) = p.kernel();
    let (sh, sw) = p.stride;
    let (ph, pw) = p.padding;
    let (oh, ow) = (out_shape.h, out_shape.w);
    let cols_w = oh * ow;
    let gx = grad_x.data_mut();
    let sample_base = sample * input.c * input.h * input.w;
    for c in 0..input.c {
        let chan_base = sample_base + c * input.h * input.w;
        for u in 0..kh {
            for v in 0..kw {
                let row = ((c * kh + u) * kw + v) * cols_w;
                for op in 0..oh {
                    let iy = (op * sh + u) as isize - ph as isize;
                    if iy < 0 || iy >= input.h as isize {
                        continue;
                    }
                    let dst_row = chan_base + iy as usize * input.w;
                    let row_out = row + op * ow;
                    for oq in 0..ow {
                        let ix = (oq * sw + v) as isize - pw as isize;
                        if ix >= 0 && ix < input.w as isize {
                            gx[dst_row + ix as usize] += cols[row_out + oq];
                        }
                    }
                }
            }
        }
    }
}

/// out[n,o,p,q] = sum over (c,u,v) of w[o,c,u,v] * x[n,c,p*sh+u-ph,q*sw+v-pw],
/// with zero outside bounds, plus bias when present.
pub fn conv2d_forward<S: Scalar>(x: &Tensor4<S>, p: &ConvParams<S>) -> Result<Tensor4<S>> {
    conv_forward_raw(x, ConvRef::from_params(p))
}

pub(crate) fn conv_forward_raw<S: Scalar>(x: &Tensor4<S>, p: ConvRef<'_, S>) -> Result<Tensor4<S>> {
    let out_shape = p.output_shape(x.shape())?;
    let (kh, kw) = p.kernel();
    let ck = x.shape().c * kh * kw;
    let cols_w = out_shape.h * out_shape.w;
    let mut cols = vec![S::ZERO; ck * cols_w];
    let mut out = Tensor4::zeros(out_shape);
    let out_c = out_shape.c;
    let sample_len = out_c * cols_w;
    for i in 0..x.shape().n {
        im2col(x, i, p, out_shape, &mut cols);
        let out_block = &mut out.data_mut()[i * sample_len..(i + 1) * sample_len];
        acc_a_b(out_c, ck, cols_w, p.weights.data(), &cols, out_block);
        if let Some(bias) = p.bias {
            for (o, &b) in bias.iter().enumerate() {
                for v in out_block[o * cols_w..(o + 1) * cols_w].iter_mut() {
                    *v += b;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the forward map; the weight and bias gradients accumulate
/// over the batch.
pub struct ConvGrads<S: Scalar> {
    pub input: Tensor4<S>,
    pub weights: Tensor4<S>,
    pub bias: Option<Vec<S>>,
}

pub fn conv2d_backward<S: Scalar>(
    x: &Tensor4<S>,
    p: &ConvParams<S>,
    grad_out: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    conv_backward_raw(x, ConvRef::from_params(p), grad_out)
}

pub(crate) fn conv_backward_raw<S: Scalar>(
    x: &Tensor4<S>,
    p: ConvRef<'_, S>,
    grad_out: &Tensor4<S>,
) -> Result<ConvGrads<S>> {
    let out_shape = p.output_shape(x.shape())?;
    if grad_out.shape() != out_shape {
        return Err(Error::Dimension(format!(
            "grad shape {} does not match forward output {out_shape}",
            grad_out.shape()
        )));
    }
    let (kh, kw) = p.kernel();
    let ck = x.shape().c * kh * kw;
    let cols_w = out_shape.h * out_shape.w;
    let out_c = out_shape.c;
    let sample_len = out_c * cols_w;

    let mut cols = vec![S::ZERO; ck * cols_w];
    let mut grad_cols = vec![S::ZERO; ck * cols_w];
    let mut grad_x = Tensor4::zeros(x.shape());
    let mut grad_w = Tensor4::zeros(p.weights.shape());
    let mut grad_b = p.bias.map(|b| vec![S::ZERO; b.len()]);

    for i in 0..x.shape().n {
        let gy = &grad_out.data()[i * sample_len..(i + 1) * sample_len];
        im2col(x, i, p, out_shape, &mut cols);
        acc_a_bt(out_c, cols_w, ck, gy, &cols, grad_w.data_mut());
        grad_cols.fill(S::ZERO);
        acc_at_b(out_c, ck, cols_w, p.weights.data(), gy, &mut grad_cols);
        col2im_add(&grad_cols, i, p, out_shape, &mut grad_x);
        if let Some(gb) = &mut grad_b {
            for (o, g) in gb.iter_mut().enumerate() {
                for &v in &gy[o * cols_w..(o + 1) * cols_w] {
                    *g += v;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: grad_x,
        weights: grad_w,
        bias: grad_b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use crate::tensor::finite_difference_grad;

    /// Direct six-nested-loop convolution; the independent oracle.
    fn direct_conv(x: &Tensor4<f64>, p: &ConvParams<f64>) -> Tensor4<f64> {
        let out_shape = p.output_shape(x.shape()).unwrap();
        let (kh, kw) = p.kernel();
        let (sh, sw) = p.stride;
        let (ph, pw) = p.padding;
        let input = x.shape();
        Tensor4::from_fn(out_shape, |n, o, py, qx| {
            let mut acc = 0.0;
            for c in 0..input.c {
                for u in 0..kh {
                    for v in 0..kw {
                        let iy = (py * sh + u) as isize - ph as isize;
                        let ix = (qx * sw + v) as isize - pw as isize;
                        if iy >= 0 && iy < input.h as isize && ix >= 0 && ix < input.w as isize {
                            acc += p.weights.at(o, c, u, v) * x.at(n, c, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc + p.bias.as_ref().map_or(0.0, |b| b[o])
        })
    }

    fn random_tensor(shape: Shape, rng: &mut Pcg32) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_, _, _, _| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn all_ones_full_window_sums_to_nine() {
        let x = Tensor4::<f64>::filled(Shape::new(1, 1, 3, 3), 1.0);
        let w = Tensor4::<f64>::filled(Shape::new(1, 1, 3, 3), 1.0);
        let p = ConvParams::new(w, (1, 1), (0, 0), None).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(y.data()[0], 9.0);
    }

    #[test]
    fn unit_1x1_kernel_is_identity() {
        let mut rng = Pcg32::seed_from(21);
        let x = random_tensor(Shape::new(2, 1, 4, 4), &mut rng);
        let w = Tensor4::<f64>::filled(Shape::new(1, 1, 1, 1), 1.0);
        let p = ConvParams::new(w, (1, 1), (0, 0), None).unwrap();
        let y = conv2d_forward(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn forward_matches_nested_loop_oracle() {
        let mut rng = Pcg32::seed_from(33);
        let x = random_tensor(Shape::new(1, 2, 5, 5), &mut rng);
        let w = random_tensor(Shape::new(3, 2, 3, 3), &mut rng);
        let p = ConvParams::new(w, (2, 2), (1, 1), None).unwrap();
        let got = conv2d_forward(&x, &p).unwrap();
        let want = direct_conv(&x, &p);
        assert_eq!(got.shape(), want.shape());
        for (g, w) in got.data().iter().zip(want.data()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn forward_matches_oracle_across_geometries() {
        let mut rng = Pcg32::seed_from(34);
        for &(in_c, out_c, h, w, k, s, pad, bias) in &[
            (1usize, 1usize, 4usize, 4usize, 1usize, 1usize, 0usize, false),
            (3, 4, 6, 5, 3, 1, 1, true),
            (2, 3, 7, 7, 3, 2, 1, false),
            (2, 2, 8, 8, 5, 3, 2, true),
            (4, 1, 5, 9, 3, 2, 0, false),
        ] {
            let x = random_tensor(Shape::new(2, in_c, h, w), &mut rng);
            let weights = random_tensor(Shape::new(out_c, in_c, k, k), &mut rng);
            let b = bias.then(|| (0..out_c).map(|_| rng.uniform(-1.0, 1.0)).collect());
            let p = ConvParams::new(weights, (s, s), (pad, pad), b).unwrap();
            let got = conv2d_forward(&x, &p).unwrap();
            let want = direct_conv(&x, &p);
            for (g, t) in got.data().iter().zip(want.data()) {
                assert!((g - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn output_shape_follows_floor_formula() {
        let mut rng = Pcg32::seed_from(35);
        for _ in 0..50 {
            let h = 1 + rng.below(12) as usize;
            let w = 1 + rng.below(12) as usize;
            let k = 1 + rng.below(4) as usize;
            let s = 1 + rng.below(3) as usize;
            let pad = rng.below(3) as usize;
            let weights = Tensor4::<f64>::zeros(Shape::new(1, 1, k, k));
            let p = ConvParams::new(weights, (s, s), (pad, pad), None).unwrap();
            let input = Shape::new(1, 1, h, w);
            match p.output_shape(input) {
                Ok(out) => {
                    assert_eq!(out.h, (h + 2 * pad - k) / s + 1);
                    assert_eq!(out.w, (w + 2 * pad - k) / s + 1);
                }
                Err(_) => assert!(h + 2 * pad < k || w + 2 * pad < k),
            }
        }
    }

    #[test]
    fn channel_mismatch_is_a_dimension_error() {
        let x = Tensor4::<f64>::zeros(Shape::new(1, 3, 4, 4));
        let w = Tensor4::<f64>::zeros(Shape::new(2, 2, 1, 1));
        let p = ConvParams::new(w, (1, 1), (0, 0), None).unwrap();
        assert!(matches!(conv2d_forward(&x, &p), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Pcg32::seed_from(40);
        let x = random_tensor(Shape::new(1, 2, 4, 4), &mut rng);
        let w = random_tensor(Shape::new(2, 2, 3, 3), &mut rng);
        let p = ConvParams::new(w, (1, 1), (1, 1), Some(vec![0.1, -0.2])).unwrap();
        let gy = Tensor4::zeros(p.output_shape(x.shape()).unwrap());
        let grads = conv2d_backward(&x, &p, &gy).unwrap();
        assert!(grads.input.data().iter().all(|&v| v == 0.0));
        assert!(grads.weights.data().iter().all(|&v| v == 0.0));
        assert!(grads.bias.unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_grad_through() {
        let mut rng = Pcg32::seed_from(41);
        let x = random_tensor(Shape::new(2, 1, 3, 3), &mut rng);
        let w = Tensor4::<f64>::filled(Shape::new(1, 1, 1, 1), 1.0);
        let p = ConvParams::new(w, (1, 1), (0, 0), None).unwrap();
        let gy = random_tensor(Shape::new(2, 1, 3, 3), &mut rng);
        let grads = conv2d_backward(&x, &p, &gy).unwrap();
        assert_eq!(grads.input.data(), gy.data());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Pcg32::seed_from(42);
        let x = random_tensor(Shape::new(2, 2, 5, 4), &mut rng);
        let w = random_tensor(Shape::new(3, 2, 3, 3), &mut rng);
        let bias: Vec<f64> = (0..3).map(|_| rng.uniform(-0.5, 0.5)).collect();
        let p = ConvParams::new(w.clone(), (2, 2), (1, 1), Some(bias.clone())).unwrap();
        // Project the output onto a fixed random direction to get a scalar loss.
        let gy = random_tensor(p.output_shape(x.shape()).unwrap(), &mut rng);
        let grads = conv2d_backward(&x, &p, &gy).unwrap();

        let loss_x = |probe: &Tensor4<f64>| {
            conv2d_forward(probe, &p).unwrap().mul(&gy).unwrap().sum_all()
        };
        let fd_x = finite_difference_grad(loss_x, &x, 1e-6);
        for (a, b) in grads.input.data().iter().zip(fd_x.data()) {
            assert!((a - b).abs() < 1e-7 + 1e-5 * b.abs().max(a.abs()));
        }

        let loss_w = |probe: &Tensor4<f64>| {
            let pw = ConvParams::new(probe.clone(), (2, 2), (1, 1), Some(bias.clone())).unwrap();
            conv2d_forward(&x, &pw).unwrap().mul(&gy).unwrap().sum_all()
        };
        let fd_w = finite_difference_grad(loss_w, &w, 1e-6);
        for (a, b) in grads.weights.data().iter().zip(fd_w.data()) {
            assert!((a - b).abs() < 1e-7 + 1e-5 * b.abs().max(a.abs()));
        }
    }
}
