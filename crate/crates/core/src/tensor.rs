//! Dense row-major tensor used for images, feature maps and parameters.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor. Images are `C×H×W`, batches `N×C×H×W`,
/// embeddings `N×D` or `D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Reinterpret the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.data.len(),
            "reshape {:?} incompatible with {} elements",
            shape,
            self.data.len()
        );
        self.shape = shape.to_vec();
        self
    }

    /// (C, H, W) of a 3-d image tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected CHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// (N, C, H, W) of a 4-d batch tensor.
    pub fn nchw(&self) -> (usize, usize, usize, usize) {
        assert_eq!(self.shape.len(), 4, "expected NCHW tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2], self.shape[3])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamp every element into `[0, 1]` in place. In-range values are
    /// returned bit-for-bit unchanged.
    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            if *v < T::zero() {
                *v = T::zero();
            } else if *v > T::one() {
                *v = T::one();
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// View a 3-d image as a batch of one.
    pub fn insert_batch_dim(&self) -> Tensor<T> {
        let mut shape = Vec::with_capacity(self.shape.len() + 1);
        shape.push(1);
        shape.extend_from_slice(&self.shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    /// Drop a leading batch dimension of size one.
    pub fn remove_batch_dim(mut self) -> Tensor<T> {
        assert_eq!(self.shape.first(), Some(&1), "leading dim must be 1");
        self.shape.remove(0);
        self
    }

    /// Stack equally shaped tensors along a new leading dimension.
    pub fn stack(items: &[&Tensor<T>]) -> Tensor<T> {
        assert!(!items.is_empty(), "cannot stack zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for it in items {
            assert_eq!(it.shape, inner, "stack requires equal shapes");
            data.extend_from_slice(&it.data);
        }
        let mut shape = Vec::with_capacity(inner.len() + 1);
        shape.push(items.len());
        shape.extend_from_slice(&inner);
        Tensor { shape, data }
    }

    /// Require an exact shape, with the operation name in the error message.
    pub fn expect_shape(&self, shape: &[usize], op: &str) -> Result<()> {
        if self.shape != shape {
            return Err(Error::Shape(format!(
                "{op}: expected shape {:?}, got {:?}",
                shape, self.shape
            )));
        }
        Ok(())
    }

    /// Mean squared difference against another tensor of the same shape.
    pub fn mse(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "mse: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a.as_f64() - b.as_f64();
            acc += d * d;
        }
        Ok(acc / self.data.len() as f64)
    }

    /// Euclidean norm of the element-wise difference.
    pub fn l2_distance(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "l2_distance requires equal shapes");
        let mut acc = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let d = a.as_f64() - b.as_f64();
            acc += d * d;
        }
        acc.sqrt()
    }

    /// Largest absolute element-wise difference.
    pub fn linf_distance(&self, other: &Tensor<T>) -> f64 {
        assert_eq!(self.shape, other.shape, "linf_distance requires equal shapes");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Convert element type, rounding through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cast(v.as_f64())).collect(),
        }
    }

    /// Raw little-endian bytes of the payload, used for hashing and blobs.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * T::BYTE_WIDTH);
        for v in &self.data {
            v.write_le(&mut out);
        }
        out
    }

    /// Stable 64-bit content hash over shape and payload bytes, used as a
    /// provenance tag for images and feature maps.
    pub fn content_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for d in &self.shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        hasher.update(self.to_le_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_preserves_in_range_bits() {
        let mut t = Tensor::<f32>::from_vec(&[4], vec![0.0, 0.25, 1.0, 0.999]);
        let before = t.clone();
        t.clamp01();
        assert_eq!(t, before);

        let mut t = Tensor::<f32>::from_vec(&[3], vec![-0.5, 1.5, 0.5]);
        t.clamp01();
        assert_eq!(t.data(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn stack_and_batch_dims() {
        let a = Tensor::<f64>::full(&[2, 3], 1.0);
        let b = Tensor::<f64>::full(&[2, 3], 2.0);
        let s = Tensor::stack(&[&a, &b]);
        assert_eq!(s.shape(), &[2, 2, 3]);
        let one = a.insert_batch_dim();
        assert_eq!(one.shape(), &[1, 2, 3]);
        assert_eq!(one.remove_batch_dim(), a);
    }
}
