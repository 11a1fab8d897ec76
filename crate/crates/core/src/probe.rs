//! Linear probes on frozen embeddings.
//!
//! Used to measure how much scene information an embedding still carries:
//! a softmax-regression classifier is fit on one set and scored on another.

use crate::common::Matrix;
use crate::error::{Error, Result};
use crate::losses::softmax_cross_entropy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            iterations: 500,
            learning_rate: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Matrix,
    bias: Vec<f64>,
}

impl LinearProbe {
    /// Full-batch gradient descent from zero on standardized features.
    pub fn fit(features: &Matrix, labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 || labels.len() != n {
            return Err(Error::shape("LinearProbe::fit", n, labels.len()));
        }
        let mut mean = vec![0.0; d];
        for r in features.iter_rows() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n as f64;
            }
        }
        let mut scale = vec![0.0; d];
        for r in features.iter_rows() {
            for ((s, v), m) in scale.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n as f64;
            }
        }
        scale.iter_mut().for_each(|s| *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 });
        let mut probe = Self {
            mean,
            scale,
            weights: Matrix::zeros(num_classes, d),
            bias: vec![0.0; num_classes],
        };
        let x = probe.standardize(features);
        for _ in 0..cfg.iterations {
            let logits = probe.logits_standardized(&x)?;
            let loss = softmax_cross_entropy(&logits, labels)?;
            let gw = loss.grad.t_matmul(&x)?;
            for (w, g) in probe.weights.data_mut().iter_mut().zip(gw.data()) {
                *w -= cfg.learning_rate * g;
            }
            for r in loss.grad.iter_rows() {
                for (b, g) in probe.bias.iter_mut().zip(r) {
                    *b -= cfg.learning_rate * g;
                }
            }
        }
        Ok(probe)
    }

    fn standardize(&self, features: &Matrix) -> Matrix {
        let mut x = features.clone();
        for i in 0..x.rows() {
            for ((v, m), s) in x.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) * s;
            }
        }
        x
    }

    fn logits_standardized(&self, x: &Matrix) -> Result<Matrix> {
        let mut logits = x.matmul_t(&self.weights)?;
        for i in 0..logits.rows() {
            for (l, b) in logits.row_mut(i).iter_mut().zip(&self.bias) {
                *l += b;
            }
        }
        Ok(logits)
    }

    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits_standardized(&self.standardize(features))?;
        Ok(logits
            .iter_rows()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(features)?;
        if pred.len() != labels.len() || pred.is_empty() {
            return Err(Error::shape("LinearProbe::accuracy", pred.len(), labels.len()));
        }
        let correct = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(correct as f64 / labels.len() as f64)
    }
}
