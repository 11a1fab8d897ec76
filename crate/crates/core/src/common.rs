//! Seeded randomness and the small dense kernels everything else is built on.
//!
//! The generator is ChaCha8 seeded through `seed_from_u64`. Independent
//! sub-streams are obtained with [`RngState::derive`], which keeps the seed and
//! selects a ChaCha stream from a `(tag, index)` pair, so modules never share a
//! mutable generator. All conversions from raw 64-bit words to floats and
//! integers go through 64-bit arithmetic, which keeps the streams identical on
//! 32- and 64-bit targets.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stream tags used with [`RngState::derive`].
pub mod streams {
    pub const INIT: u64 = 1;
    pub const PLAN: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const SYNTH: u64 = 5;
    pub const PROBE: u64 = 6;
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    inner: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for the sub-task `(tag, index)` under `seed`.
    ///
    /// Stream id is `tag * 0x9E3779B97F4A7C15 ^ index` (wrapping).
    pub fn derive(seed: u64, tag: u64, index: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn next_int(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::invalid("next_int requires n >= 1"));
        }
        Ok(self.inner.random_range(0..n as u64) as usize)
    }

    pub fn next_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.random_range(0..=i as u64) as usize;
            items.swap(i, j);
        }
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::shape("Matrix::from_rows", cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on zero; a 0-column matrix has no data anyway
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// Rows selected by `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: indices.len(),
            cols: self.cols,
            data,
        }
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("inner dim {}", self.cols),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a = self.row(i);
            let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &aik) in a.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (oj, bkj) in o.iter_mut().zip(other.row(k)) {
                    *oj += aik * bkj;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ`, i.e. all pairwise row dot products.
    pub fn matmul_t(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape(
                "matmul_t",
                format!("inner dim {}", self.cols),
                other.cols,
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape(
                "t_matmul",
                format!("outer dim {}", self.rows),
                other.rows,
            ));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let a = self.row(r);
            let b = other.row(r);
            for (i, &ai) in a.iter().enumerate() {
                if ai == 0.0 {
                    continue;
                }
                let o = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (oj, bj) in o.iter_mut().zip(b) {
                    *oj += ai * bj;
                }
            }
        }
        Ok(out)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub fn norm(u: &[f64]) -> f64 {
    dot(u, u).sqrt()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape("cosine_similarity", u.len(), v.len()));
    }
    if u.is_empty() {
        return Err(Error::invalid("cosine_similarity of empty vectors"));
    }
    let nu = norm(u);
    let nv = norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine_similarity"));
    }
    Ok(dot(u, v) / (nu * nv))
}

/// Squared Euclidean distances between the rows of `a` and `b`, clamped at 0.
pub fn pairwise_sq_euclidean(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::shape("pairwise_sq_euclidean", a.cols(), b.cols()));
    }
    let an: Vec<f64> = a.iter_rows().map(|r| dot(r, r)).collect();
    let bn: Vec<f64> = b.iter_rows().map(|r| dot(r, r)).collect();
    let mut out = a.matmul_t(b)?;
    for i in 0..a.rows() {
        for (j, bj) in bn.iter().enumerate() {
            let d = an[i] + bj - 2.0 * out.get(i, j);
            out.set(i, j, d.max(0.0));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[0.3, 0.4], &[0.3, 0.4]).unwrap() - 1.0).abs() < 1e-15);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::ZeroNorm(_))
        ));
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 0.0]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn pairwise_examples() {
        let a = Matrix::from_rows(&[[0.0]]).unwrap();
        let b = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(pairwise_sq_euclidean(&a, &b).unwrap().data(), &[9.0]);

        let a = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(pairwise_sq_euclidean(&a, &b).unwrap().data(), &[2.0, 0.0]);

        let bad = Matrix::zeros(1, 3);
        assert!(pairwise_sq_euclidean(&a, &bad).is_err());
    }

    fn random_matrix(rng: &mut RngState, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.next_normal()).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn pairwise_matches_naive_loop() {
        let mut rng = RngState::new(11);
        for _ in 0..20 {
            let a = random_matrix(&mut rng, 20, 8);
            let b = random_matrix(&mut rng, 20, 8);
            let d = pairwise_sq_euclidean(&a, &b).unwrap();
            let dt = pairwise_sq_euclidean(&b, &a).unwrap();
            let self_d = pairwise_sq_euclidean(&a, &a).unwrap();
            for i in 0..20 {
                assert!(self_d.get(i, i).abs() < 1e-9);
                for j in 0..20 {
                    let naive: f64 = a
                        .row(i)
                        .iter()
                        .zip(b.row(j))
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum();
                    assert!((d.get(i, j) - naive).abs() < 1e-9);
                    assert!((d.get(i, j) - dt.get(j, i)).abs() < 1e-9);
                    assert!(d.get(i, j) >= 0.0);
                }
            }
        }
    }

    #[test]
    fn rng_determinism() {
        let mut a = RngState::new(42);
        let mut b = RngState::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut a = RngState::derive(42, streams::PLAN, 3);
        let mut b = RngState::derive(42, streams::PLAN, 3);
        let mut c = RngState::derive(42, streams::PLAN, 4);
        let xa: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..8).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn rng_pinned_stream() {
        // Pins the generator so that a dependency bump changing the stream
        // shows up here instead of as drifting goldens elsewhere.
        let mut rng = RngState::new(2024);
        let words: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
        let mut again = RngState::new(2024);
        assert_eq!(words[0], again.next_u64());
        assert_eq!(words, PINNED_2024.to_vec());
    }

    const PINNED_2024: [u64; 3] = [
        3080959604347521991,
        18123447844947586703,
        12649239169944512436,
    ];

    #[test]
    fn rng_small_cases() {
        let mut rng = RngState::new(1);
        for _ in 0..100 {
            assert_eq!(rng.next_int(1).unwrap(), 0);
            let u = rng.next_uniform();
            assert!((0.0..1.0).contains(&u));
        }
        assert!(rng.next_int(0).is_err());
        let mut one = vec![7];
        rng.shuffle(&mut one);
        assert_eq!(one, vec![7]);
    }

    #[test]
    fn shuffle_is_uniform_over_permutations() {
        let mut rng = RngState::new(99);
        let mut counts = std::collections::HashMap::new();
        let trials = 40_000;
        for _ in 0..trials {
            let mut v = [0u8, 1, 2, 3];
            rng.shuffle(&mut v);
            *counts.entry(v).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 24);
        let expected = trials as f64 / 24.0;
        for (&perm, &c) in &counts {
            let rel = (c as f64 - expected).abs() / expected;
            assert!(rel <= 0.15, "{perm:?}: {c}");
        }
    }

    proptest! {
        #[test]
        fn cosine_self_and_scale(
            u in proptest::collection::vec(-10.0f64..10.0, 1..8),
            alpha in 0.01f64..100.0,
            seed in any::<u64>(),
        ) {
            prop_assume!(norm(&u) > 1e-3);
            let c = cosine_similarity(&u, &u).unwrap();
            prop_assert!((c - 1.0).abs() < 1e-12);
            let mut rng = RngState::new(seed);
            let v: Vec<f64> = u.iter().map(|_| rng.next_normal()).collect();
            prop_assume!(norm(&v) > 1e-3);
            let scaled: Vec<f64> = u.iter().map(|x| x * alpha).collect();
            let a = cosine_similarity(&scaled, &v).unwrap();
            let b = cosine_similarity(&u, &v).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
