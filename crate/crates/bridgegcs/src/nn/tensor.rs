//! Flat row-major tensors of `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense tensor: a shape plus a flat row-major buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch {
                expected: n,
                got: data.len(),
                context: format!("tensor shape {shape:?}"),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Dot product of two equal-length slices.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity in [-1, 1]. A zero-norm input yields 0 and sets the
/// degenerate flag so collapsed embeddings stay detectable without NaNs.
pub fn cosine_sim_flagged(a: &[f64], b: &[f64]) -> (f64, bool) {
    assert_eq!(a.len(), b.len(), "cosine_sim: length mismatch");
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return (0.0, true);
    }
    let s = dot(a, b) / (na * nb);
    (s.clamp(-1.0, 1.0), false)
}

/// Cosine similarity, zero-norm inputs mapped to 0.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> f64 {
    cosine_sim_flagged(a, b).0
}

/// Gradients of `cosine_sim(a, b)` with respect to `a` and `b`.
///
/// For degenerate (zero-norm) inputs the similarity is constant 0, so the
/// gradient is zero as well.
pub fn cosine_sim_backward(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let s = dot(a, b) / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(&ai, &bi)| bi / (na * nb) - s * ai / (na * na))
        .collect();
    let db = b
        .iter()
        .zip(a)
        .map(|(&bi, &ai)| ai / (na * nb) - s * bi / (nb * nb))
        .collect();
    (da, db)
}
