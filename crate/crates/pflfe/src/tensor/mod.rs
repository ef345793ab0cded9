//! Dense f64 tensors with a reverse-mode tape, an SGD optimizer, a
//! finite-difference gradient checker, and a flat checkpoint format.
//!
//! Everything runs in f64 so that identical seeds produce bit-identical
//! results regardless of thread count or platform.

mod checkpoint;
mod gradcheck;
mod graph;
mod kernels;
mod sgd;

pub use checkpoint::{load_tensors, save_tensors, CHECKPOINT_MAGIC};
pub use gradcheck::{finite_diff_check, finite_diff_check_with_fault, Fault, GradCheckReport};
pub use graph::{Graph, ValueId};
pub use sgd::SgdState;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense multi-dimensional f64 array in row-major order, with an optional
/// gradient buffer of identical length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and row-major data; the data length must
    /// equal the shape product.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
            grad: None,
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
        }
    }

    /// Samples every element from `U(lo, hi)`.
    pub fn uniform<R: Rng>(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape,
            data,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the data; the length (and so the shape) cannot change.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Returns the gradient buffer, allocating zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_mut().unwrap()
    }

    /// Adds `scale * delta` into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &[f64], scale: f64) {
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self.grad_mut();
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += scale * di;
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Euclidean norm of the flattened data.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_buffer_is_lazily_allocated() {
        let mut t = Tensor::zeros(vec![4]);
        assert!(t.grad().is_none());
        t.grad_mut()[2] = 1.5;
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 1.5, 0.0]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn uniform_is_seed_deterministic() {
        use rand::SeedableRng;
        let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let ta = Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut a);
        let tb = Tensor::uniform(vec![3, 3], -1.0, 1.0, &mut b);
        assert_eq!(ta, tb);
    }
}
