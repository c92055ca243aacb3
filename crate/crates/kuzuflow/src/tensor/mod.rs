//! Dense tensor type and the layer operations built on it.

mod gemm;
pub mod gradcheck;
pub mod ops;

pub use gemm::sgemm;

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f32` in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, checking that the extents are positive and that
    /// `product(shape) == data.len()`.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension(
                "tensor",
                format!("zero extent in shape {shape:?}"),
            ));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dimension(
                "tensor",
                format!(
                    "shape {shape:?} holds {expected} elements but {} were supplied",
                    data.len()
                ),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: impl Into<Vec<usize>>, value: f32) -> Self {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent along axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row-major offset of `[n, c, h, w]` in a rank-4 tensor.
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.rank(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> f32 {
        self.data[self.offset4(n, c, h, w)]
    }

    /// Copies sample `n` of a rank-4 batch into a fresh `[1, C, H, W]` tensor.
    pub fn sample(&self, n: usize) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::dimension("sample", "expected rank-4 tensor"));
        }
        if n >= self.shape[0] {
            return Err(Error::Index {
                op: "sample",
                detail: format!("sample {n} out of {}", self.shape[0]),
            });
        }
        let stride: usize = self.shape[1..].iter().product();
        let data = self.data[n * stride..(n + 1) * stride].to_vec();
        Tensor::new(vec![1, self.shape[1], self.shape[2], self.shape[3]], data)
    }

    /// Gathers the listed samples of a rank-4 batch into a new batch, in the
    /// order given.
    pub fn gather_samples(&self, indices: &[usize]) -> Result<Tensor> {
        if self.rank() != 4 {
            return Err(Error::dimension("gather_samples", "expected rank-4 tensor"));
        }
        let stride: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * stride);
        for &i in indices {
            if i >= self.shape[0] {
                return Err(Error::Index {
                    op: "gather_samples",
                    detail: format!("sample {i} out of {}", self.shape[0]),
                });
            }
            data.extend_from_slice(&self.data[i * stride..(i + 1) * stride]);
        }
        Tensor::new(
            vec![indices.len(), self.shape[1], self.shape[2], self.shape[3]],
            data,
        )
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)
        } else {
            write!(f, " [{} values]", self.data.len())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn gather_preserves_order() {
        let t = Tensor::new(vec![3, 1, 1, 2], (0..6).map(|v| v as f32).collect()).unwrap();
        let g = t.gather_samples(&[2, 0]).unwrap();
        assert_eq!(g.shape(), &[2, 1, 1, 2]);
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
