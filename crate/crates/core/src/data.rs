//! Observation containers.

use std::hash::{Hash, Hasher};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `n` observations in a common `d`-dimensional space, with a per-row flag
/// recording whether the row was produced by a contamination step.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Vec<DVector<f64>>,
    dim: usize,
    contaminated: Vec<bool>,
}

impl Dataset {
    pub fn new(points: Vec<DVector<f64>>) -> Result<Self> {
        let n = points.len();
        Self::with_flags(points, vec![false; n])
    }

    pub fn with_flags(points: Vec<DVector<f64>>, contaminated: Vec<bool>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InvalidInput("dataset must be nonempty".into()))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::InvalidInput("observations must have dimension >= 1".into()));
        }
        if contaminated.len() != points.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: contaminated.len(),
            });
        }
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput("non-finite observation".into()));
            }
        }
        Ok(Self {
            points,
            dim,
            contaminated,
        })
    }

    /// One-dimensional dataset from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| DVector::from_element(1, v)).collect())
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(rows.iter().map(|r| DVector::from_column_slice(r)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> &[DVector<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &DVector<f64> {
        &self.points[i]
    }

    pub fn contaminated(&self) -> &[bool] {
        &self.contaminated
    }

    pub fn contaminated_count(&self) -> usize {
        self.contaminated.iter().filter(|&&c| c).count()
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for p in &self.points {
            m += p;
        }
        m / self.len() as f64
    }

    /// Sample covariance with the `1/(n-1)` normalisation.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n < 2 {
            return Err(Error::DegenerateData(format!(
                "covariance needs at least 2 observations, got {n}"
            )));
        }
        let mean = self.mean();
        let mut s = DMatrix::zeros(self.dim, self.dim);
        for p in &self.points {
            let c = p - &mean;
            s += &c * c.transpose();
        }
        Ok(s / (n - 1) as f64)
    }

    /// Stable fingerprint of the coordinates, used to tie caches to data.
    pub fn fingerprint(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.points.len().hash(&mut h);
        self.dim.hash(&mut h);
        for p in &self.points {
            for v in p.iter() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Rows as plain vectors, for IO.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.points.iter().map(|p| p.iter().copied().collect()).collect()
    }

    /// Concatenate another dataset with the same dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        crate::error::check_dim(self.dim, other.dim)?;
        let mut points = self.points.clone();
        points.extend(other.points.iter().cloned());
        let mut flags = self.contaminated.clone();
        flags.extend_from_slice(&other.contaminated);
        Dataset::with_flags(points, flags)
    }
}
