//! Dense row-major tensors.

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;

/// Dense n-dimensional array in row-major order.
///
/// A `Tensor` is a plain value. Participation in differentiation happens by
/// registering it on a [`Tape`](crate::autodiff::Tape), which hands back a
/// [`Var`](crate::autodiff::Var).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor, rejecting zero extents, count mismatches and
    /// non-finite elements.
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let dims = dims.into();
        if dims.contains(&0) {
            return shape_err(format!("zero extent in dims {dims:?}"));
        }
        let count: usize = dims.iter().product();
        if count != data.len() {
            return shape_err(format!(
                "dims {dims:?} need {count} elements, got {}",
                data.len()
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("tensor construction"));
        }
        Ok(Self { dims, data })
    }

    /// Skips validation; callers guarantee the invariants.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Self::from_parts(dims, vec![T::zero(); n])
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Self {
        let dims = dims.into();
        let n = dims.iter().product();
        Self::from_parts(dims, vec![value; n])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        let n = data.len();
        Self::new(vec![n], data)
    }

    pub fn from_f64(dims: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() != 1 {
            return shape_err(format!("item() on tensor with dims {:?}", self.dims));
        }
        Ok(self.data[0])
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let o = self.offset(index);
        self.data[o] = value;
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        index
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&i, &d)| {
                assert!(i < d, "index {i} out of bounds for extent {d}");
                acc * d + i
            })
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.iter().product::<usize>() != self.data.len() || dims.contains(&0) {
            return shape_err(format!("cannot reshape {:?} into {dims:?}", self.dims));
        }
        self.dims = dims;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_parts(self.dims.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize_lossy(self.data.len())
    }

    pub fn dot(&self, other: &Self) -> T {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += scale * other`, elementwise.
    pub fn axpy(&mut self, scale: T, other: &Self) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Converts element type, e.g. `f64` to `f32`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.dims.clone(),
            self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_validates_count_and_finiteness() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 4]).is_ok());
        assert!(matches!(
            Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![2], vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Tensor::<f64>::new(vec![0, 2], vec![]),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn indexing_is_row_major() {
        let t = Tensor::<f64>::from_f64(vec![2, 3], &[0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(t.at(&[1, 2]), 5.0);
        assert_eq!(t.at(&[0, 1]), 1.0);
        let r = t.reshape(vec![3, 2]).unwrap();
        assert_eq!(r.at(&[2, 0]), 4.0);
    }
}
