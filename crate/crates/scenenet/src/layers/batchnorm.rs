//! Batch normalization over the channel axis.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

/// Learned scale/shift plus running statistics. All vectors are stored as
/// (1, C, 1, 1) tensors so the optimizer and checkpoints can treat every
/// parameter uniformly.
#[derive(Debug, Clone)]
pub struct BatchNormParams<S: Scalar> {
    pub gamma: Tensor4<S>,
    pub beta: Tensor4<S>,
    pub running_mean: Tensor4<S>,
    pub running_var: Tensor4<S>,
    pub eps: S,
    /// Update rate toward the batch statistic, in (0, 1].
    pub momentum: S,
}

impl<S: Scalar> BatchNormParams<S> {
    pub fn new(channels: usize, eps: S, momentum: S) -> BatchNormParams<S> {
        let vec_shape = Shape::new(1, channels, 1, 1);
        BatchNormParams {
            gamma: Tensor4::filled(vec_shape, S::ONE),
            beta: Tensor4::zeros(vec_shape),
            running_mean: Tensor4::zeros(vec_shape),
            running_var: Tensor4::filled(vec_shape, S::ONE),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.shape().c
    }

    fn check_input(&self, x: &Tensor4<S>) -> Result<()> {
        if x.shape().c != self.channels() {
            return Err(Error::Dimension(format!(
                "input has {} channels, batch norm expects {}",
                x.shape().c,
                self.channels()
            )));
        }
        Ok(())
    }
}

/// Values saved by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<S: Scalar> {
    normalized: Tensor4<S>,
    inv_std: Vec<S>,
}

/// Training-mode normalization by batch statistics. Pure in its inputs;
/// running statistics are untouched (see [`bn_forward_train`]).
pub fn bn_train_math<S: Scalar>(
    x: &Tensor4<S>,
    p: &BatchNormParams<S>,
) -> Result<(Tensor4<S>, BnCache<S>)> {
    p.check_input(x)?;
    let s = x.shape();
    let m = s.n * s.h * s.w;
    if m < 2 {
        return Err(Error::Dimension(format!(
            "training-mode batch norm needs n*h*w >= 2, got {m}"
        )));
    }
    let m_s = S::from_usize(m);
    let mut mean = vec![S::ZERO; s.c];
    let mut var = vec![S::ZERO; s.c];
    for j in 0..s.c {
        let mut acc = S::ZERO;
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    acc += x.at(i, j, k, l);
                }
            }
        }
        mean[j] = acc / m_s;
        let mut sq = S::ZERO;
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    let d = x.at(i, j, k, l) - mean[j];
                    sq += d * d;
                }
            }
        }
        var[j] = sq / m_s;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::ONE / (v + p.eps).sqrt()).collect();
    let mut normalized = Tensor4::zeros(s);
    let mut out = Tensor4::zeros(s);
    for i in 0..s.n {
        for j in 0..s.c {
            let g = p.gamma.data()[j];
            let b = p.beta.data()[j];
            for k in 0..s.h {
                for l in 0..s.w {
                    let xhat = (x.at(i, j, k, l) - mean[j]) * inv_std[j];
                    *normalized.at_mut(i, j, k, l) = xhat;
                    *out.at_mut(i, j, k, l) = g * xhat + b;
                }
            }
        }
    }
    Ok((out, BnCache { normalized, inv_std }))
}

/// Training-mode forward: normalizes by batch statistics and moves the
/// running statistics toward them (variance update is the unbiased
/// estimate, which is why m >= 2 is required).
pub fn bn_forward_train<S: Scalar>(
    x: &Tensor4<S>,
    p: &mut BatchNormParams<S>,
) -> Result<(Tensor4<S>, BnCache<S>)> {
    let (out, cache) = bn_train_math(x, p)?;
    let s = x.shape();
    let m = S::from_usize(s.n * s.h * s.w);
    let unbias = m / (m - S::ONE);
    let keep = S::ONE - p.momentum;
    for j in 0..s.c {
        let inv = cache.inv_std[j];
        let batch_var = S::ONE / (inv * inv) - p.eps;
        // Recover the batch mean from a single column scan to avoid storing it.
        let mut mean = S::ZERO;
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    mean += x.at(i, j, k, l);
                }
            }
        }
        mean /= m;
        p.running_mean.data_mut()[j] = keep * p.running_mean.data()[j] + p.momentum * mean;
        p.running_var.data_mut()[j] =
            keep * p.running_var.data()[j] + p.momentum * (batch_var * unbias);
    }
    Ok((out, cache))
}

/// Evaluation-mode forward: out = gamma * (x - running_mean) / sqrt(running_var + eps) + beta.
pub fn bn_forward_eval<S: Scalar>(x: &Tensor4<S>, p: &BatchNormParams<S>) -> Result<Tensor4<S>> {
    p.check_input(x)?;
    let s = x.shape();
    let mut out = Tensor4::zeros(s);
    for j in 0..s.c {
        let inv = S::ONE / (p.running_var.data()[j] + p.eps).sqrt();
        let g = p.gamma.data()[j];
        let b = p.beta.data()[j];
        let mu = p.running_mean.data()[j];
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    *out.at_mut(i, j, k, l) = g * (x.at(i, j, k, l) - mu) * inv + b;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of the training-mode forward.
pub struct BnGrads<S: Scalar> {
    pub input: Tensor4<S>,
    pub gamma: Tensor4<S>,
    pub beta: Tensor4<S>,
}

pub fn bn_backward<S: Scalar>(
    p: &BatchNormParams<S>,
    cache: &BnCache<S>,
    grad_out: &Tensor4<S>,
) -> Result<BnGrads<S>> {
    let s = grad_out.shape();
    if s != cache.normalized.shape() {
        return Err(Error::Dimension(format!(
            "grad shape {s} does not match cached activations {}",
            cache.normalized.shape()
        )));
    }
    let m = S::from_usize(s.n * s.h * s.w);
    let vec_shape = Shape::new(1, s.c, 1, 1);
    let mut grad_gamma = Tensor4::zeros(vec_shape);
    let mut grad_beta = Tensor4::zeros(vec_shape);
    let mut grad_x = Tensor4::zeros(s);
    for j in 0..s.c {
        let mut sum_gy = S::ZERO;
        let mut sum_gy_xhat = S::ZERO;
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    let gy = grad_out.at(i, j, k, l);
                    sum_gy += gy;
                    sum_gy_xhat += gy * cache.normalized.at(i, j, k, l);
                }
            }
        }
        grad_gamma.data_mut()[j] = sum_gy_xhat;
        grad_beta.data_mut()[j] = sum_gy;
        let scale = p.gamma.data()[j] * cache.inv_std[j];
        let mean_gy = sum_gy / m;
        let mean_gy_xhat = sum_gy_xhat / m;
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    let gy = grad_out.at(i, j, k, l);
                    let xhat = cache.normalized.at(i, j, k, l);
                    *grad_x.at_mut(i, j, k, l) = scale * (gy - mean_gy - xhat * mean_gy_xhat);
                }
            }
        }
    }
    Ok(BnGrads {
        input: grad_x,
        gamma: grad_gamma,
        beta: grad_beta,
    })
}
