//! Dense row-major `f64` tensor.

use super::NumError;

/// Dense tensor of 64-bit reals, row-major. Constructors reject non-finite
/// values so every public operation downstream starts from finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], values: Vec<f64>) -> Result<Self, NumError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(NumError::ShapeMismatch {
                shape: shape.to_vec(),
                expected,
                actual: values.len(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(NumError::NonFinite("tensor constructor".into()));
        }
        Ok(Self {
            shape: shape.to_vec(),
            values,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            values: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-crate numeric kernels. Callers are responsible
    /// for keeping values finite; public operations re-check on exit.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Index into a rank-3 [H, W, C] tensor.
    #[inline(always)]
    pub fn idx3(&self, y: usize, x: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        let (w, ch) = (self.shape[1], self.shape[2]);
        self.values[(y * w + x) * ch + c]
    }

    /// Index into a rank-2 [H, W] tensor.
    #[inline(always)]
    pub fn idx2(&self, y: usize, x: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[y * self.shape[1] + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64, NumError> {
        if self.shape != other.shape {
            return Err(NumError::IncompatibleShapes {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.values {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }
}
