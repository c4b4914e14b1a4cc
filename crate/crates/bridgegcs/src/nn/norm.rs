//! Per-channel affine standardization.

use serde::{Deserialize, Serialize};

/// Per-channel affine standardization fit on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn fit<'a, I: IntoIterator<Item = &'a [f64]>>(rows: I) -> Self {
        let mut count = 0usize;
        let mut mean: Vec<f64> = Vec::new();
        let mut sumsq: Vec<f64> = Vec::new();
        for row in rows {
            if mean.is_empty() {
                mean = vec![0.0; row.len()];
                sumsq = vec![0.0; row.len()];
            }
            for (k, &v) in row.iter().enumerate() {
                mean[k] += v;
                sumsq[k] += v * v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        for m in mean.iter_mut() {
            *m /= n;
        }
        let std = sumsq
            .iter()
            .zip(&mean)
            .map(|(&sq, &m)| {
                let var = (sq / n - m * m).max(0.0);
                let s = var.sqrt();
                // near-constant channels get unit scale so standardizing
                // them never amplifies noise (StandardScaler convention)
                if s < 1e-8 {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Normalization { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (&m, &s))| v * s + m)
            .collect()
    }
}

impl Normalization {
    /// Unit transform (mean 0, scale 1) for models stored in raw units.
    pub fn identity(dim: usize) -> Self {
        Normalization {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }
}
