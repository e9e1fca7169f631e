//! Dense row-major point sets.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A set of points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("point dimension must be positive"));
        }
        if data.len() % dim != 0 {
            return Err(invalid(format!(
                "buffer of length {} is not a multiple of dimension {}",
                data.len(),
                dim
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            dim: dim.max(1),
            data: Vec::new(),
        }
    }

    /// Builds from a list of rows; all rows must share a dimension.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| invalid("no rows"))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(invalid(format!(
                    "row {i} has dimension {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    /// One-dimensional points.
    pub fn from_scalars(xs: &[f64]) -> Self {
        Self {
            dim: 1,
            data: xs.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }

    /// `self` followed by `other`.
    pub fn concat(&self, other: &Points) -> Result<Self> {
        if self.dim != other.dim {
            return Err(invalid(format!(
                "dimension mismatch: {} vs {}",
                self.dim, other.dim
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            dim: self.dim,
            data,
        })
    }
}

/// Pooled binary-labeled sample: numerator draws (label +1) and denominator
/// draws (label -1).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub numerator: Points,
    pub denominator: Points,
}

impl LabeledSample {
    pub fn new(numerator: Points, denominator: Points) -> Result<Self> {
        if !numerator.is_empty() && !denominator.is_empty() && numerator.dim() != denominator.dim()
        {
            return Err(invalid("numerator and denominator dimensions differ"));
        }
        Ok(Self {
            numerator,
            denominator,
        })
    }

    pub fn dim(&self) -> usize {
        if self.numerator.is_empty() {
            self.denominator.dim()
        } else {
            self.numerator.dim()
        }
    }

    /// Numerator rows followed by denominator rows.
    pub fn pooled(&self) -> Result<Points> {
        self.numerator.concat(&self.denominator)
    }
}
