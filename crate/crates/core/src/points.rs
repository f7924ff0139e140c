use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of input points of common dimension `dim`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                context: "point coordinates",
                expected: dim.max(1),
                got: coords.len(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidData("non-finite input coordinate".into()));
        }
        Ok(Points { dim, coords })
    }

    /// One-dimensional points.
    pub fn scalars(xs: impl Into<Vec<f64>>) -> Self {
        Points {
            dim: 1,
            coords: xs.into(),
        }
    }

    /// `n` evenly spaced scalars from `from` to `to` inclusive.
    pub fn linspace(from: f64, to: f64, n: usize) -> Self {
        let xs = match n {
            0 => vec![],
            1 => vec![from],
            _ => (0..n)
                .map(|i| from + (to - from) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Points::scalars(xs)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// The raw coordinates; for `dim == 1` these are the scalar inputs.
    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    /// Concatenates `self` followed by `other`.
    pub fn concat(&self, other: &Points) -> Result<Points> {
        if !self.is_empty() && !other.is_empty() && self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                context: "point concatenation",
                expected: self.dim,
                got: other.dim,
            });
        }
        let mut coords = self.coords.clone();
        coords.extend_from_slice(&other.coords);
        Ok(Points {
            dim: self.dim,
            coords,
        })
    }

    /// Points at the given indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Points {
        let mut coords = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            coords.extend_from_slice(self.get(i));
        }
        Points {
            dim: self.dim,
            coords,
        }
    }
}
