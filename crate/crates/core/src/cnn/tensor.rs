use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense `n × c × h × w` tensor, row-major with `n` outermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4 {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    values: Vec<f64>,
}

impl Tensor4 {
    pub fn new(n: usize, c: usize, h: usize, w: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * c * h * w {
            return Err(Error::Shape(format!(
                "tensor {n}x{c}x{h}x{w} needs {} values, got {}",
                n * c * h * w,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite tensor value at index {i}")));
        }
        Ok(Self { n, c, h, w, values })
    }

    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self::raw(n, c, h, w, vec![0.0; n * c * h * w])
    }

    /// Unchecked constructor for internal activations; finiteness is
    /// monitored through the loss instead.
    pub(crate) fn raw(n: usize, c: usize, h: usize, w: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * c * h * w);
        Self { n, c, h, w, values }
    }

    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
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

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.sample_len();
        &self.values[i * s..(i + 1) * s]
    }

    pub fn plane(&self, i: usize, ch: usize) -> &[f64] {
        let p = self.h * self.w;
        &self.values[(i * self.c + ch) * p..][..p]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn ensure_same_shape(&self, other: &Tensor4) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}
