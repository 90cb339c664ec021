use std::fmt;
use std::iter::Sum;

use num_traits::Float;

/// Floating-point element type of a [`Tensor`].
///
/// Training and verification run in `f64`; the latency benchmark runs the
/// same kernels in `f32`.
pub trait Real: Float + Sum + Send + Sync + fmt::Debug + fmt::Display + Default + 'static {
    const NAME: &'static str;

    fn of_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

/// Dense row-major n-dimensional array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::default(); n],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Panics if `data.len()` differs from the shape's element count.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        Self::try_from_vec(shape, data).expect("tensor data length must match shape")
    }

    pub fn try_from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, ShapeError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ShapeError {
                expected: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
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

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, ShapeError> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(ShapeError {
                expected: shape.to_vec(),
                len: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Number of elements in one step along axis 0.
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    /// Rows `[start, end)` along axis 0.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.shape[0], "row range out of bounds");
        let row = self.row_len();
        let mut shape = self.shape.clone();
        shape[0] = end - start;
        Tensor {
            shape,
            data: self.data[start * row..end * row].to_vec(),
        }
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Concatenate along axis 0. All parts must agree on trailing dims.
    pub fn stack_rows(parts: &[&Tensor<T>]) -> Result<Self, ShapeError> {
        let first = parts.first().ok_or(ShapeError {
            expected: vec![],
            len: 0,
        })?;
        let tail = &first.shape[1..];
        let mut rows = 0;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.numel()).sum());
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(ShapeError {
                    expected: first.shape.clone(),
                    len: p.numel(),
                });
            }
            rows += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::of_f64(v.as_f64()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> T {
        assert_eq!(self.shape, other.shape, "shape mismatch in max_abs_diff");
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "shape mismatch in add_assign");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    pub fn scale(&self, factor: T) -> Tensor<T> {
        self.map(|v| v * factor)
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= PREVIEW {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..PREVIEW])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("shape {expected:?} does not match {len} elements")]
pub struct ShapeError {
    pub expected: Vec<usize>,
    pub len: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::try_from_vec(&[2, 3], vec![0.0f64; 5]).is_err());
        let t = Tensor::from_vec(&[2, 3], (0..6).map(|v| v as f64).collect());
        assert_eq!(t.row_len(), 3);
        assert_eq!(t.slice_rows(1, 2).data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn stack_rows_concatenates() {
        let a = Tensor::from_vec(&[1, 2], vec![1.0f32, 2.0]);
        let b = Tensor::from_vec(&[2, 2], vec![3.0f32, 4.0, 5.0, 6.0]);
        let s = Tensor::stack_rows(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[3, 2]);
        assert_eq!(s.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let c = Tensor::from_vec(&[1, 3], vec![0.0f32; 3]);
        assert!(Tensor::stack_rows(&[&a, &c]).is_err());
    }

    #[test]
    fn cast_roundtrips_representable_values() {
        let t = Tensor::from_vec(&[3], vec![0.5f64, -2.0, 1024.0]);
        assert_eq!(t.cast::<f32>().cast::<f64>(), t);
    }
}
