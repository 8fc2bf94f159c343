//! Fully connected classifier layer.

use crate::error::{Error, Result};
use crate::layers::matmul::{acc_a_b, acc_a_bt, acc_at_b};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// Weight is (out, in, 1, 1); bias, when present, is (1, out, 1, 1).
#[derive(Debug, Clone)]
pub struct LinearParams<S: Scalar> {
    pub weight: Tensor4<S>,
    pub bias: Option<Tensor4<S>>,
}

impl<S: Scalar> LinearParams<S> {
    pub fn in_features(&self) -> usize {
        self.weight.shape().c
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape().n
    }

    fn check_input(&self, x: &Tensor4<S>) -> Result<()> {
        let s = x.shape();
        if s.c != self.in_features() || s.h != 1 || s.w != 1 {
            return Err(Error::Dimension(format!(
                "linear layer expects (n, {}, 1, 1), got {s}",
                self.in_features()
            )));
        }
        Ok(())
    }
}

/// y[n, o] = sum_i w[o, i] * x[n, i] + b[o]
pub fn linear_forward<S: Scalar>(x: &Tensor4<S>, p: &LinearParams<S>) -> Result<Tensor4<S>> {
    p.check_input(x)?;
    let n = x.shape().n;
    let (fi, fo) = (p.in_features(), p.out_features());
    let mut out = Tensor4::zeros(Shape::new(n, fo, 1, 1));
    // x is (n x fi), weight^T is (fi x fo): out = x * w^T.
    acc_a_bt(n, fi, fo, x.data(), p.weight.data(), out.data_mut());
    if let Some(bias) = &p.bias {
        for i in 0..n {
            for o in 0..fo {
                *out.at_mut(i, o, 0, 0) += bias.data()[o];
            }
        }
    }
    Ok(out)
}

pub struct LinearGrads<S: Scalar> {
    pub input: Tensor4<S>,
    pub weight: Tensor4<S>,
    pub bias: Option<Tensor4<S>>,
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor4<S>,
    p: &LinearParams<S>,
    grad_out: &Tensor4<S>,
) -> Result<LinearGrads<S>> {
    p.check_input(x)?;
    let n = x.shape().n;
    let (fi, fo) = (p.in_features(), p.out_features());
    if grad_out.shape() != Shape::new(n, fo, 1, 1) {
        return Err(Error::Dimension(format!(
            "grad shape {} does not match linear output (n={n}, out={fo})",
            grad_out.shape()
        )));
    }
    // grad_w (fo x fi) = gy^T (fo x n) * x (n x fi)
    let mut grad_w = Tensor4::zeros(p.weight.shape());
    acc_at_b(n, fo, fi, grad_out.data(), x.data(), grad_w.data_mut());
    // grad_x (n x fi) = gy (n x fo) * w (fo x fi)
    let mut grad_x = Tensor4::zeros(x.shape());
    acc_a_b(n, fo, fi, grad_out.data(), p.weight.data(), grad_x.data_mut());
    let grad_b = p.bias.as_ref().map(|b| {
        let mut gb = Tensor4::zeros(b.shape());
        for i in 0..n {
            for o in 0..fo {
                gb.data_mut()[o] += grad_out.at(i, o, 0, 0);
            }
        }
        gb
    });
    Ok(LinearGrads {
        input: grad_x,
        weight: grad_w,
        bias: grad_b,
    })
}
