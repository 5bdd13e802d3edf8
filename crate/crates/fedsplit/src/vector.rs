//! Flat `f64` parameter vectors.
//!
//! Every model, update and noise draw in the simulator is a [`ParamVector`]:
//! a fixed-dimension, always-finite vector. Reductions over vectors are
//! index-ordered so that repeated runs are bitwise identical; no parallel
//! reduction is used on the aggregation path.

use crate::error::{Error, Result};

/// Fixed-dimension real vector. Entries are finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    /// Wrap raw values, rejecting NaN/Inf entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "ParamVector::new",
            });
        }
        Ok(ParamVector { values })
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector {
            values: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.values.iter()
    }

    /// Euclidean norm, 0 iff the vector is zero.
    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Elementwise scale by a finite factor.
    pub fn scale(&self, a: f64) -> Result<ParamVector> {
        if !a.is_finite() {
            return Err(Error::NonFinite {
                context: "ParamVector::scale",
            });
        }
        ParamVector::new(self.values.iter().map(|x| a * x).collect())
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(1.0, self, other)
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    /// In-place `self += a * x`, used by the tight training loops.
    pub fn axpy_in_place(&mut self, a: f64, x: &ParamVector) -> Result<()> {
        check_dims(self, x)?;
        for (s, v) in self.values.iter_mut().zip(&x.values) {
            *s += a * v;
        }
        if self.values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: "ParamVector::axpy_in_place",
            });
        }
        Ok(())
    }
}

fn check_dims(x: &ParamVector, y: &ParamVector) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimMismatch {
            left: x.dim(),
            right: y.dim(),
        });
    }
    Ok(())
}

/// `a * x + y`, elementwise.
pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    check_dims(x, y)?;
    ParamVector::new(
        x.values
            .iter()
            .zip(&y.values)
            .map(|(xi, yi)| a * xi + yi)
            .collect(),
    )
}

/// `l2_norm` as a free function, mirroring the crate's operation surface.
pub fn l2_norm(x: &ParamVector) -> f64 {
    x.l2_norm()
}

/// Index-ordered sum of equal-dimension vectors.
pub fn sum_vectors(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(Error::EmptyVector)?;
    let mut acc = ParamVector::zeros(first.dim());
    for v in vectors {
        acc.axpy_in_place(1.0, v)?;
    }
    Ok(acc)
}
