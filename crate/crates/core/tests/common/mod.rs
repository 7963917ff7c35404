#![allow(dead_code)]

use concept_engine::{EmbeddingMatrix, Matrix, RepresentationMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

/// Rows of |gaussian| entries, so every coordinate is non-negative.
pub fn positive_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let data = (0..rows * cols)
        .map(|_| {
            let g: f64 = StandardNormal.sample(rng);
            g.abs() + 1e-3
        })
        .collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn unit_representations(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
) -> RepresentationMatrix<f64> {
    RepresentationMatrix::normalized(gaussian_matrix(rng, rows, cols)).unwrap()
}

pub fn unit_embeddings(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> EmbeddingMatrix<f64> {
    EmbeddingMatrix::normalized(gaussian_matrix(rng, rows, cols)).unwrap()
}

/// Alphabetic pseudo-word for index `i`.
pub fn word(i: usize) -> String {
    let a = (b'a' + (i % 26) as u8) as char;
    let b = (b'a' + (i / 26 % 26) as u8) as char;
    format!("{b}{a}q")
}

/// Two-pass population mean and std over every entry.
pub fn two_pass_mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `k` distinct indices from `0..n`, ascending.
pub fn distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    let mut out = rand::seq::index::sample(rng, n, k.min(n)).into_vec();
    out.sort_unstable();
    out
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Sequential f64 dot, independent of the engine's helper.
pub fn oracle_dot<T: Copy + Into<f64>>(a: &[T], b: &[T]) -> f64 {
    let mut acc = 0.0f64;
    for i in 0..a.len() {
        acc += a[i].into() * b[i].into();
    }
    acc
}
