//! Dense row-major tensors generic over element precision.
//!
//! `Tensor<f32>` is the training value type; `Tensor<f64>` is used wherever
//! gradients are verified against finite differences. Broadcasting follows
//! trailing-dimension alignment: shapes are right-aligned and an extent of 1
//! stretches to match.

use std::fmt;

use crate::error::{Error, Result};

/// Element type of tensors. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    const DTYPE: &'static str;

    fn of(x: f64) -> Self {
        num_traits::cast(x).expect("f64 -> scalar cast")
    }

    fn as_f64(self) -> f64 {
        num_traits::cast(self).expect("scalar -> f64 cast")
    }
}

impl Scalar for f32 {
    const DTYPE: &'static str = "f32";
}

impl Scalar for f64 {
    const DTYPE: &'static str = "f64";
}

#[derive(Clone)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Build a tensor, validating that every extent is positive and that
    /// `product(shape) == data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} implies {numel} elements, data has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); numel],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    /// Rank-1 scalar wrapper (shape `[1]`).
    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.shape[i + 1];
        }
        strides
    }

    /// Error if any element is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite value {v} at flat index {i} in {context}"
                )));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Exact bit equality; the comparison used by determinism tests.
    pub fn bits_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.numel() <= 16 {
            write!(f, "Tensor{:?} {:?}", self.shape, self.data)
        } else {
            write!(f, "Tensor{:?} ({} elements)", self.shape, self.numel())
        }
    }
}

/// Broadcast two shapes with trailing-dimension alignment.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da != db && da != 1 && db != 1 {
            return Err(Error::shape(format!(
                "cannot broadcast {a:?} with {b:?}"
            )));
        }
        out[i] = da.max(db);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_validates_shape_product() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn strides_are_row_major() {
        let t = Tensor::<f32>::zeros(&[2, 3, 4]);
        assert_eq!(t.strides(), vec![12, 4, 1]);
    }

    #[test]
    fn check_finite_rejects_nan_and_inf() {
        let t = Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]).unwrap();
        assert!(t.check_finite("test").is_err());
        let t = Tensor::<f64>::new(vec![2], vec![1.0, f64::INFINITY]).unwrap();
        assert!(t.check_finite("test").is_err());
        let t = Tensor::<f64>::new(vec![2], vec![1.0, -2.0]).unwrap();
        assert!(t.check_finite("test").is_ok());
    }

    #[test]
    fn broadcast_trailing_alignment() {
        assert_eq!(broadcast_shapes(&[4, 3], &[3]).unwrap(), vec![4, 3]);
        assert_eq!(broadcast_shapes(&[2, 1, 5], &[4, 1]).unwrap(), vec![2, 4, 5]);
        assert!(broadcast_shapes(&[2, 3], &[4]).is_err());
    }
}
