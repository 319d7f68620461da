use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array, row-major with the last axis fastest.
///
/// Ranks 1–4 are used throughout the crate. The buffer is always contiguous
/// and `numel when constructed == shape product`, checked on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::ZERO; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::config(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Scalar tensor (shape `[1]`).
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

    /// Extent of axis `i`.
    pub fn dim(&self, i: usize) -> usize {
        self.shape[i]
    }

    /// Same data, new shape. Element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Convert element type (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::from_f64(x.to_f64())).collect(),
        }
    }

    #[inline]
    pub fn at2(&self, r: usize, c: usize) -> T {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn at3(&self, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 3);
        self.data[(c * self.shape[1] + h) * self.shape[2] + w]
    }

    #[inline]
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        debug_assert_eq!(self.rank(), 4);
        self.data[((b * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w]
    }

    #[inline]
    pub fn set3(&mut self, c: usize, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.rank(), 3);
        let (s1, s2) = (self.shape[1], self.shape[2]);
        self.data[(c * s1 + h) * s2 + w] = v;
    }

    #[inline]
    pub fn set4(&mut self, b: usize, c: usize, h: usize, w: usize, v: T) {
        debug_assert_eq!(self.rank(), 4);
        let (s1, s2, s3) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * s1 + c) * s2 + h) * s3 + w] = v;
    }

    /// Elementwise check used by tests: max |a - b|.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

impl<T: Scalar> Tensor<T> {
    /// Fill from a generator in row-major order (deterministic init).
    pub fn generate(shape: &[usize], mut f: impl FnMut() -> T) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|_| f()).collect(),
        }
    }
}
