//! Dense row-major tensor of up to four axes, the carrier for boundary
//! condition channels, network activations, and residual fields.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct FieldTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> FieldTensor<T> {
    /// Construct from external input; rejects shape/data mismatch and
    /// non-finite entries.
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::Dimension(format!(
                "tensor rank must be 1..=4, got {}",
                shape.len()
            )));
        }
        if shape.iter().any(|&e| e == 0) {
            return Err(Error::Dimension(format!("zero extent in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dimension(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        for (index, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    index,
                    value: v.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by checked arithmetic.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![T::zero(); numel])
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: T) -> Self {
        Self::from_raw(vec![1], vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel = shape.iter().product();
        Self::from_raw(shape.to_vec(), (0..numel).map(&mut f).collect())
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// The single entry of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Flat offset for a 3-axis index (rows, cols, channels).
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (i * self.shape[1] + j) * self.shape[2] + c
    }

    /// Flat offset for a 4-axis index (batch, rows, cols, channels).
    #[inline]
    pub fn idx4(&self, b: usize, i: usize, j: usize, c: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((b * self.shape[1] + i) * self.shape[2] + j) * self.shape[3] + c
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, c: usize) -> T {
        self.data[self.idx3(i, j, c)]
    }

    #[inline]
    pub fn at4(&self, b: usize, i: usize, j: usize, c: usize) -> T {
        self.data[self.idx4(b, i, j, c)]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} ({} elements) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shape tensors.
    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch in zip");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Self::from_raw(self.shape.clone(), data)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_squares(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn rms(&self) -> T {
        (self.sum_squares() / T::from_f64_lossy(self.len() as f64)).sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    /// Lossy precision conversion (f32 <-> f64) through f64.
    pub fn cast<U: Scalar>(&self) -> FieldTensor<U> {
        FieldTensor::from_raw(
            self.shape.clone(),
            self.data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64().unwrap()))
                .collect(),
        )
    }
}
