//! Pairwise cosine distances between client update vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamVector;

/// What vector represents a client when measuring similarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Basis {
    /// The uploaded parameters as-is.
    Params,
    /// Uploaded parameters minus the global model the client started from.
    #[default]
    Delta,
}

pub fn basis_vector(
    local: &ParamVector,
    global_prev: &ParamVector,
    basis: Basis,
) -> Result<ParamVector> {
    match basis {
        Basis::Params => Ok(local.clone()),
        Basis::Delta => {
            local.check_len(global_prev.len())?;
            Ok(local
                .iter()
                .zip(global_prev.iter())
                .map(|(l, g)| l - g)
                .collect::<Vec<_>>()
                .into())
        }
    }
}

/// `1 - cos(a, b)`, clamped to `[0, 2]`. A zero vector is at distance 1
/// from everything, itself included.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    (1.0 - dot / (na.sqrt() * nb.sqrt())).clamp(0.0, 2.0)
}

/// Symmetric matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from a full row-major `n x n` table; validity is checked by
    /// consumers such as the clustering routines.
    pub fn from_rows(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::Length {
                expected: n * n,
                actual: entries.len(),
            });
        }
        Ok(Self { n, entries })
    }

    /// Fills every unordered pair from `f(i, j)` with `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut entries = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let d = f(i, j);
                entries[i * n + j] = d;
                entries[j * n + i] = d;
            }
        }
        Self { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.n.max(1))
    }
}

/// Cosine distance matrix over already-chosen basis vectors.
pub fn distance_matrix(vectors: &[ParamVector]) -> Result<DistanceMatrix> {
    if vectors.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 vectors for a distance matrix, got {}",
            vectors.len()
        )));
    }
    let len = vectors[0].len();
    for v in vectors {
        v.check_len(len)?;
    }
    Ok(DistanceMatrix::from_fn(vectors.len(), |i, j| {
        cosine_distance(&vectors[i], &vectors[j])
    }))
}
