//! Dense `f64` vectors used for iterates, gradients and momentum buffers.

use std::ops::Index;

use crate::error::{Error, Result};

/// A dense real vector of fixed length.
///
/// Arithmetic helpers return new vectors; the `*_assign` variants update in
/// place. Length checks are done by the fallible methods, the infallible
/// ones assume the caller already matched dimensions.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    /// Builds a vector, rejecting NaN and infinite entries.
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if let Some(pos) = entries.iter().position(|x| !x.is_finite()) {
            return Err(Error::config("vector", format!("entry {pos} is not finite")));
        }
        Ok(Vector(entries))
    }

    pub fn zeros(d: usize) -> Self {
        Vector(vec![0.0; d])
    }

    pub(crate) fn from_raw(entries: Vec<f64>) -> Self {
        Vector(entries)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    pub fn check_len(&self, d: usize) -> Result<()> {
        if self.len() != d {
            return Err(Error::Dimension { expected: d, found: self.len() });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.len(), other.len());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// `a * x + y`.
    pub fn axpy(a: f64, x: &Vector, y: &Vector) -> Result<Vector> {
        y.check_len(x.len())?;
        Ok(Vector(x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + yi).collect()))
    }

    /// `self += a * x`
    pub fn axpy_assign(&mut self, a: f64, x: &Vector) {
        debug_assert_eq!(self.len(), x.len());
        for (s, xi) in self.0.iter_mut().zip(&x.0) {
            *s += a * xi;
        }
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.len(), other.len());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn scale(&self, a: f64) -> Vector {
        Vector(self.0.iter().map(|x| a * x).collect())
    }

    pub fn add_assign(&mut self, other: &Vector) {
        debug_assert_eq!(self.len(), other.len());
        for (s, o) in self.0.iter_mut().zip(&other.0) {
            *s += o;
        }
    }

    /// Convex-style combination `a * x + b * y`, evaluated per entry in that order.
    pub fn lincomb(a: f64, x: &Vector, b: f64, y: &Vector) -> Vector {
        debug_assert_eq!(x.len(), y.len());
        Vector(x.0.iter().zip(&y.0).map(|(xi, yi)| a * xi + b * yi).collect())
    }

    /// Mean of a non-empty set of equal-length vectors, summed in the given order.
    pub fn mean<'a, I>(vectors: I, d: usize) -> Vector
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let mut acc = Vector::zeros(d);
        let mut count = 0usize;
        for v in vectors {
            acc.add_assign(v);
            count += 1;
        }
        let inv = 1.0 / count.max(1) as f64;
        for x in acc.0.iter_mut() {
            *x *= inv;
        }
        acc
    }
}

impl Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Free-function form of [`Vector::norm`].
pub fn norm(v: &Vector) -> f64 {
    v.norm()
}

/// Free-function form of [`Vector::axpy`].
pub fn axpy(a: f64, x: &Vector, y: &Vector) -> Result<Vector> {
    Vector::axpy(a, x, y)
}
