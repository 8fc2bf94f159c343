//! Activation and classification-head operations: ReLU, global average
//! pooling and softmax cross-entropy.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor4};

pub fn relu_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    x.map(|v| if v > S::ZERO { v } else { S::ZERO })
}

/// Gradient passes where the forward input was strictly positive.
pub fn relu_backward<S: Scalar>(x: &Tensor4<S>, grad_out: &Tensor4<S>) -> Result<Tensor4<S>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::Dimension(format!(
            "relu backward: shapes {} and {} do not match",
            x.shape(),
            grad_out.shape()
        )));
    }
    let mut out = grad_out.clone();
    for (g, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= S::ZERO {
            *g = S::ZERO;
        }
    }
    Ok(out)
}

/// (n, c, h, w) -> (n, c, 1, 1) spatial mean.
pub fn global_avg_pool_forward<S: Scalar>(x: &Tensor4<S>) -> Tensor4<S> {
    let s = x.shape();
    let area = S::from_usize(s.h * s.w);
    let mut out = Tensor4::zeros(Shape::new(s.n, s.c, 1, 1));
    for i in 0..s.n {
        for j in 0..s.c {
            let mut acc = S::ZERO;
            for k in 0..s.h {
                for l in 0..s.w {
                    acc += x.at(i, j, k, l);
                }
            }
            *out.at_mut(i, j, 0, 0) = acc / area;
        }
    }
    out
}

pub fn global_avg_pool_backward<S: Scalar>(
    grad_out: &Tensor4<S>,
    input_shape: Shape,
) -> Result<Tensor4<S>> {
    let g = grad_out.shape();
    if g.n != input_shape.n || g.c != input_shape.c || g.h != 1 || g.w != 1 {
        return Err(Error::Dimension(format!(
            "global average pool backward: grad {g} does not match input {input_shape}"
        )));
    }
    let area = S::from_usize(input_shape.h * input_shape.w);
    Ok(Tensor4::from_fn(input_shape, |i, j, _, _| {
        grad_out.at(i, j, 0, 0) / area
    }))
}

/// Softmax probabilities plus mean negative log-likelihood; softmax is
/// computed with max subtraction for stability.
pub struct CrossEntropy<S: Scalar> {
    pub loss: S,
    pub probs: Tensor4<S>,
}

pub fn softmax_cross_entropy_forward<S: Scalar>(
    logits: &Tensor4<S>,
    labels: &[usize],
) -> Result<CrossEntropy<S>> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::Dimension(format!(
            "cross entropy expects (n, classes, 1, 1) logits, got {s}"
        )));
    }
    if labels.len() != s.n {
        return Err(Error::Validation(format!(
            "{} labels for a batch of {}",
            labels.len(),
            s.n
        )));
    }
    for (i, &label) in labels.iter().enumerate() {
        if label >= s.c {
            return Err(Error::Validation(format!(
                "label {label} out of range [0, {}) at sample {i}",
                s.c
            )));
        }
    }
    let mut probs = Tensor4::zeros(s);
    let mut loss = S::ZERO;
    for (i, &label) in labels.iter().enumerate() {
        let mut max = logits.at(i, 0, 0, 0);
        for j in 1..s.c {
            max = max.maximum(logits.at(i, j, 0, 0));
        }
        let mut z = S::ZERO;
        for j in 0..s.c {
            z += (logits.at(i, j, 0, 0) - max).exp();
        }
        for j in 0..s.c {
            *probs.at_mut(i, j, 0, 0) = (logits.at(i, j, 0, 0) - max).exp() / z;
        }
        loss += -(logits.at(i, label, 0, 0) - max - z.ln());
    }
    loss /= S::from_usize(s.n);
    Ok(CrossEntropy { loss, probs })
}

/// Gradient of the mean loss with respect to the logits:
/// (softmax - onehot) / n.
pub fn softmax_cross_entropy_backward<S: Scalar>(
    ce: &CrossEntropy<S>,
    labels: &[usize],
) -> Tensor4<S> {
    let s = ce.probs.shape();
    let inv_n = S::ONE / S::from_usize(s.n);
    Tensor4::from_fn(s, |i, j, _, _| {
        let onehot = if labels[i] == j { S::ONE } else { S::ZERO };
        (ce.probs.at(i, j, 0, 0) - onehot) * inv_n
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Pcg32;
    use crate::tensor::finite_difference_grad;

    #[test]
    fn relu_clamps_negative_and_keeps_positive() {
        let x = Tensor4::from_data(Shape::new(1, 1, 1, 2), vec![-1.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 2.0]);
    }

    #[test]
    fn uniform_logits_give_ln_c_loss() {
        for c in [2usize, 5, 10] {
            let logits = Tensor4::<f64>::filled(Shape::new(3, c, 1, 1), 0.7);
            let ce = softmax_cross_entropy_forward(&logits, &[0, c - 1, c / 2]).unwrap();
            assert!((ce.loss - (c as f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn out_of_range_label_is_a_validation_error() {
        let logits = Tensor4::<f64>::zeros(Shape::new(1, 3, 1, 1));
        assert!(matches!(
            softmax_cross_entropy_forward(&logits, &[3]),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Pcg32::seed_from(70);
        let logits = Tensor4::from_fn(Shape::new(2, 4, 1, 1), |_, _, _, _| rng.uniform(-1.0, 1.0));
        let labels = [1usize, 3];
        let ce = softmax_cross_entropy_forward(&logits, &labels).unwrap();
        let grad = softmax_cross_entropy_backward(&ce, &labels);
        let fd = finite_difference_grad(
            |probe| softmax_cross_entropy_forward(probe, &labels).unwrap().loss,
            &logits,
            1e-5,
        );
        for (a, b) in grad.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn per_sample_gradient_rows_sum_to_zero() {
        let mut rng = Pcg32::seed_from(71);
        let logits = Tensor4::from_fn(Shape::new(4, 7, 1, 1), |_, _, _, _| rng.uniform(-2.0, 2.0));
        let labels = [0usize, 3, 6, 2];
        let ce = softmax_cross_entropy_forward(&logits, &labels).unwrap();
        let grad = softmax_cross_entropy_backward(&ce, &labels);
        for i in 0..4 {
            let mut row = 0.0;
            for j in 0..7 {
                row += grad.at(i, j, 0, 0);
            }
            assert!(row.abs() < 1e-12, "sample {i} row sum {row}");
        }
    }

    #[test]
    fn global_avg_pool_round_trip_gradient() {
        let mut rng = Pcg32::seed_from(72);
        let x = Tensor4::from_fn(Shape::new(2, 3, 4, 4), |_, _, _, _| rng.uniform(-1.0, 1.0));
        let y = global_avg_pool_forward(&x);
        assert_eq!(y.shape(), Shape::new(2, 3, 1, 1));
        let direction = Tensor4::from_fn(y.shape(), |_, _, _, _| rng.uniform(-1.0, 1.0));
        let gx = global_avg_pool_backward(&direction, x.shape()).unwrap();
        let fd = finite_difference_grad(
            |probe| {
                global_avg_pool_forward(probe)
                    .mul(&direction)
                    .unwrap()
                    .sum_all()
            },
            &x,
            1e-6,
        );
        for (a, b) in gx.data().iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }
}
