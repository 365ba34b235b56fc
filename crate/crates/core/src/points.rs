//! Flat storage for clouds of points in ℝᵈ.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// `len` points of dimension `dim`, stored row-major in one buffer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("point dimension must be at least 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Contract(format!(
                "buffer of length {} is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * len],
        }
    }

    /// One-dimensional points from scalars.
    pub fn from_scalars(values: Vec<f64>) -> Self {
        Self {
            dim: 1,
            data: values,
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

    #[inline]
    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Coordinate `axis` of every point.
    pub fn column(&self, axis: usize) -> Vec<f64> {
        self.iter().map(|p| p[axis]).collect()
    }

    /// Projection of every point onto `direction`.
    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.iter()
            .map(|p| p.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// The first `n` points (or all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Points {
        let n = n.min(self.len());
        Points {
            dim: self.dim,
            data: self.data[..n * self.dim].to_vec(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for p in self.iter() {
            for (acc, v) in m.iter_mut().zip(p) {
                *acc += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }
}
