//! Dense rank-4 tensors.
//!
//! Storage is contiguous row-major over (batch, channel, row, col);
//! element (i, j, k, l) lives at flat index `((i*c + j)*h + k)*w + l`.
//! Reductions accumulate sequentially left-to-right so repeated runs on
//! identical inputs are bit-identical.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dimensions of a rank-4 tensor; equality is componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.c + j) * self.h + k) * self.w + l
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense rank-4 array of activations, weights or gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<S: Scalar> {
    shape: Shape,
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(shape: Shape) -> Tensor4<S> {
        Tensor4 {
            shape,
            data: vec![S::ZERO; shape.numel()],
        }
    }

    pub fn filled(shape: Shape, value: S) -> Tensor4<S> {
        Tensor4 {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    /// Wraps existing row-major data; length must equal `n*c*h*w` and all
    /// dims must be at least 1.
    pub fn from_data(shape: Shape, data: Vec<S>) -> Result<Tensor4<S>> {
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::Dimension(format!(
                "all dims must be >= 1, got {shape}"
            )));
        }
        if data.len() != shape.numel() {
            return Err(Error::Dimension(format!(
                "data length {} does not match shape {shape} ({} elements)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Tensor4<S> {
        let mut data = Vec::with_capacity(shape.numel());
        for i in 0..shape.n {
            for j in 0..shape.c {
                for k in 0..shape.h {
                    for l in 0..shape.w {
                        data.push(f(i, j, k, l));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> S {
        self.data[self.shape.index(i, j, k, l)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut S {
        let idx = self.shape.index(i, j, k, l);
        &mut self.data[idx]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor4<S> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts elementwise between numeric modes.
    pub fn cast<T: Scalar>(&self) -> Tensor4<T> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
        }
    }

    fn check_same_shape(&self, other: &Tensor4<S>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {} and {} do not match",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_same_shape(other, "add")?;
        Ok(self.zip(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_same_shape(other, "sub")?;
        Ok(self.zip(other, |a, b| a - b))
    }

    pub fn mul(&self, other: &Tensor4<S>) -> Result<Tensor4<S>> {
        self.check_same_shape(other, "mul")?;
        Ok(self.zip(other, |a, b| a * b))
    }

    pub fn scale(&self, factor: S) -> Tensor4<S> {
        self.map(|v| v * factor)
    }

    fn zip(&self, other: &Tensor4<S>, f: impl Fn(S, S) -> S) -> Tensor4<S> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// In-place `self += other * factor`; the one mutation the optimizer needs.
    pub fn add_scaled(&mut self, other: &Tensor4<S>, factor: S) -> Result<()> {
        self.check_same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b * factor;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: S) {
        for v in self.data.iter_mut() {
            *v = value;
        }
    }

    /// Sequential left-to-right sum of every element.
    pub fn sum_all(&self) -> S {
        let mut acc = S::ZERO;
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    /// Maximum over every element.
    pub fn max_all(&self) -> S {
        let mut best = self.data[0];
        for &v in &self.data[1..] {
            if v > best {
                best = v;
            }
        }
        best
    }

    /// Sums over the axes flagged true (order n, c, h, w); reduced axes
    /// collapse to extent 1.
    pub fn sum_axes(&self, axes: [bool; 4]) -> Tensor4<S> {
        let s = self.shape;
        let out_shape = Shape::new(
            if axes[0] { 1 } else { s.n },
            if axes[1] { 1 } else { s.c },
            if axes[2] { 1 } else { s.h },
            if axes[3] { 1 } else { s.w },
        );
        let mut out = Tensor4::zeros(out_shape);
        for i in 0..s.n {
            for j in 0..s.c {
                for k in 0..s.h {
                    for l in 0..s.w {
                        let oi = if axes[0] { 0 } else { i };
                        let oj = if axes[1] { 0 } else { j };
                        let ok = if axes[2] { 0 } else { k };
                        let ol = if axes[3] { 0 } else { l };
                        *out.at_mut(oi, oj, ok, ol) += self.at(i, j, k, l);
                    }
                }
            }
        }
        out
    }

    /// Index of the largest channel per (batch, row, col) position, first
    /// occurrence winning ties. Result is row-major over (n, h, w).
    pub fn argmax_channel(&self) -> Vec<usize> {
        let s = self.shape;
        let mut out = Vec::with_capacity(s.n * s.h * s.w);
        for i in 0..s.n {
            for k in 0..s.h {
                for l in 0..s.w {
                    let mut best = 0usize;
                    let mut best_val = self.at(i, 0, k, l);
                    for j in 1..s.c {
                        let v = self.at(i, j, k, l);
                        if v > best_val {
                            best_val = v;
                            best = j;
                        }
                    }
                    out.push(best);
                }
            }
        }
        out
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Central-difference gradient of a scalar-valued function, one coordinate
/// at a time: `(f(x + eps·e_i) − f(x − eps·e_i)) / (2 eps)`.
///
/// This is the independent oracle every backward pass is checked against;
/// run it in 64-bit mode for headroom.
pub fn finite_difference_grad<S: Scalar>(
    f: impl Fn(&Tensor4<S>) -> S,
    x: &Tensor4<S>,
    eps: S,
) -> Tensor4<S> {
    assert!(eps > S::ZERO, "eps must be positive");
    let mut probe = x.clone();
    let mut grad = Tensor4::zeros(x.shape());
    let two = S::ONE + S::ONE;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (plus - minus) / (two * eps);
    }
    grad
}
