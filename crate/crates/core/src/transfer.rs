//! Linear maps between representation spaces.
//!
//! Samples are rows, so the fitted map satisfies `H_target · Z ≈ H_source`
//! with `Z` of shape `r_target × r_source`. Row `t` of `Z` says how target
//! feature `t` spreads over the source features; column `s` says which target
//! features carry source feature `s`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::GroupKey;
use crate::concepts::{RankedConcept, ReportStore};
use crate::data::RepresentationMatrix;
use crate::error::{Error, Result};
use crate::femb;
use crate::matrix::Matrix;
use crate::report::{sig6, write_json};
use crate::scalar::{dot, Scalar};

pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_LEARNING_RATE: f64 = 1.0;
pub const DEFAULT_BATCH_SIZE: usize = 1;
pub const SPARSIFY_STD_MULTIPLIER: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferMode {
    ClosedForm,
    Sgd,
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransferMode::ClosedForm => "closed-form",
            TransferMode::Sgd => "sgd",
        })
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-form" | "closed_form" => Ok(TransferMode::ClosedForm),
            "sgd" => Ok(TransferMode::Sgd),
            _ => Err(Error::Config(format!("unknown transfer mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferHyper {
    /// Ridge term for the closed-form solve.
    pub lambda: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Minibatch size for sgd; 0 means the full batch.
    pub batch_size: usize,
    /// Reshuffle the sample order every epoch.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TransferHyper {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: DEFAULT_BATCH_SIZE,
            shuffle: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferMap<T> {
    pub z: Matrix<T>,
    /// Mean squared row residual `|h_t Z - h_s|²` over the training samples.
    pub fit_residual: f64,
    pub mode: TransferMode,
    pub lambda: f64,
}

/// Sidecar stored next to the FEMB matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSidecar {
    pub mode: TransferMode,
    #[serde(serialize_with = "sig6")]
    pub residual: f64,
    pub lambda: f64,
}

impl<T: Scalar> TransferMap<T> {
    pub fn n_target(&self) -> usize {
        self.z.rows()
    }

    pub fn n_source(&self) -> usize {
        self.z.cols()
    }

    /// For each target feature, the source feature with the largest weight
    /// (lower index on ties).
    pub fn row_argmax(&self) -> Vec<usize> {
        self.z
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (i, v) in row.iter().enumerate().skip(1) {
                    if *v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn sidecar(&self) -> TransferSidecar {
        TransferSidecar {
            mode: self.mode,
            residual: self.fit_residual,
            lambda: self.lambda,
        }
    }

    /// Write `Z` as FEMB and the sidecar as JSON.
    pub fn save(
        &self,
        matrix_path: impl AsRef<Path>,
        sidecar_path: impl AsRef<Path>,
    ) -> Result<()> {
        femb::write_matrix(matrix_path, &self.z.cast::<f32>())?;
        write_json(sidecar_path, &self.sidecar())
    }

    pub fn load(matrix_path: impl AsRef<Path>, sidecar_path: impl AsRef<Path>) -> Result<Self> {
        let z = femb::read_matrix(matrix_path)?.cast::<T>();
        let path = sidecar_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let side: TransferSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        Ok(Self {
            z,
            fit_residual: side.residual,
            mode: side.mode,
            lambda: side.lambda,
        })
    }
}

fn widened<T: Scalar>(h: &RepresentationMatrix<T>) -> Matrix<f64> {
    h.matrix().cast::<f64>()
}

/// Mean over samples of the squared row residual of `H_t Z - H_s`.
pub fn mean_squared_residual(ht: &Matrix<f64>, hs: &Matrix<f64>, z: &Matrix<f64>) -> f64 {
    let mut total = 0.0;
    for j in 0..ht.rows() {
        let pred = row_times(ht.row(j), z);
        total += pred
            .iter()
            .zip(hs.row(j))
            .map(|(p, s)| (p - s) * (p - s))
            .sum::<f64>();
    }
    total / ht.rows() as f64
}

/// `x · Z` for a row vector `x`.
fn row_times(x: &[f64], z: &Matrix<f64>) -> Vec<f64> {
    let mut out = vec![0.0; z.cols()];
    for (xi, zrow) in x.iter().zip(z.iter_rows()) {
        if *xi == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(zrow) {
            *o += xi * v;
        }
    }
    out
}

/// Fit `Z` so that `H_target Z ≈ H_source`. Both matrices must be normalized
/// and share the sample count; feature counts may differ.
pub fn fit_transfer<T: Scalar>(
    h_target: &RepresentationMatrix<T>,
    h_source: &RepresentationMatrix<T>,
    mode: TransferMode,
    hyper: &TransferHyper,
) -> Result<TransferMap<T>> {
    h_target.require_normalized("target representation matrix")?;
    h_source.require_normalized("source representation matrix")?;
    if h_target.n_samples() != h_source.n_samples() {
        return Err(Error::DimensionMismatch {
            context: "transfer sample count",
            expected: h_target.n_samples(),
            found: h_source.n_samples(),
        });
    }
    let ht = widened(h_target);
    let hs = widened(h_source);
    let z = match mode {
        TransferMode::ClosedForm => closed_form(&ht, &hs, hyper.lambda)?,
        TransferMode::Sgd => sgd(&ht, &hs, hyper)?,
    };
    let fit_residual = mean_squared_residual(&ht, &hs, &z);
    Ok(TransferMap {
        z: z.cast::<T>(),
        fit_residual,
        mode,
        lambda: hyper.lambda,
    })
}

/// `(H_tᵀ H_t + λI)⁻¹ H_tᵀ H_s` via Cholesky.
fn closed_form(ht: &Matrix<f64>, hs: &Matrix<f64>, lambda: f64) -> Result<Matrix<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "lambda {lambda} must be finite and >= 0"
        )));
    }
    let rt = ht.cols();
    let rs = hs.cols();
    let mut gram = Matrix::<f64>::zeros(rt, rt);
    let mut rhs = Matrix::<f64>::zeros(rt, rs);
    for j in 0..ht.rows() {
        let t = ht.row(j);
        let s = hs.row(j);
        for a in 0..rt {
            let ta = t[a];
            if ta == 0.0 {
                continue;
            }
            for (g, tb) in gram.row_mut(a)[..=a].iter_mut().zip(t) {
                *g += ta * tb;
            }
            for (r, sb) in rhs.row_mut(a).iter_mut().zip(s) {
                *r += ta * sb;
            }
        }
    }
    for a in 0..rt {
        gram.set(a, a, gram.get(a, a) + lambda);
    }
    let l = cholesky(&gram).ok_or(Error::SingularSystem { lambda })?;
    Ok(cholesky_solve(&l, &rhs))
}

/// Lower-triangular factor of a symmetric positive definite matrix, reading
/// only the lower triangle. `None` when a pivot is not positive.
pub fn cholesky(a: &Matrix<f64>) -> Option<Matrix<f64>> {
    let n = a.rows();
    let mut l = Matrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if !(sum > 0.0 && sum.is_finite()) {
                    return None;
                }
                l.set(i, i, sum.sqrt());
            } else {
                l.set(i, j, sum / l.get(j, j));
            }
        }
    }
    Some(l)
}

/// Solve `L Lᵀ X = B` column by column.
pub fn cholesky_solve(l: &Matrix<f64>, b: &Matrix<f64>) -> Matrix<f64> {
    let n = l.rows();
    let mut x = Matrix::<f64>::zeros(n, b.cols());
    let mut y = vec![0.0; n];
    for c in 0..b.cols() {
        for i in 0..n {
            let s = b.get(i, c) - dot(&l.row(i)[..i], &y[..i]);
            y[i] = s / l.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}

/// Minibatch gradient descent on `½ mean_batch |h_t Z - h_s|²`, zero init.
fn sgd(ht: &Matrix<f64>, hs: &Matrix<f64>, hyper: &TransferHyper) -> Result<Matrix<f64>> {
    if !(hyper.learning_rate > 0.0 && hyper.learning_rate.is_finite()) {
        return Err(Error::InvalidValue("learning rate must be positive".into()));
    }
    let n = ht.rows();
    let batch = if hyper.batch_size == 0 {
        n
    } else {
        hyper.batch_size.min(n)
    };
    let mut z = Matrix::<f64>::zeros(ht.cols(), hs.cols());
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut grad = Matrix::<f64>::zeros(ht.cols(), hs.cols());
    for _ in 0..hyper.epochs {
        if hyper.shuffle {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(batch) {
            grad.as_mut_slice().fill(0.0);
            for &j in chunk {
                let t = ht.row(j);
                let mut resid = row_times(t, &z);
                for (r, s) in resid.iter_mut().zip(hs.row(j)) {
                    *r -= s;
                }
                for (a, ta) in t.iter().enumerate() {
                    if *ta == 0.0 {
                        continue;
                    }
                    for (g, r) in grad.row_mut(a).iter_mut().zip(&resid) {
                        *g += ta * r;
                    }
                }
            }
            let step = hyper.learning_rate / chunk.len() as f64;
            for (zv, g) in z.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *zv -= step * g;
            }
        }
    }
    if !z.is_finite() {
        return Err(Error::InvalidValue("sgd diverged".into()));
    }
    Ok(z)
}

/// Strong weights of a map: per source feature, the target features whose
/// weight exceeds `mean + 4·std` over all entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseMapping {
    #[serde(serialize_with = "sig6")]
    pub mean: f64,
    #[serde(serialize_with = "sig6")]
    pub std: f64,
    #[serde(serialize_with = "sig6")]
    pub threshold: f64,
    /// Indexed by source feature.
    #[serde(skip)]
    pub targets: Vec<BTreeSet<usize>>,
}

pub fn sparsify<T: Scalar>(map: &TransferMap<T>) -> SparseMapping {
    let (mean, std) = map.z.entry_mean_std();
    let threshold = mean + SPARSIFY_STD_MULTIPLIER * std;
    let mut targets = vec![BTreeSet::new(); map.n_source()];
    for (t, row) in map.z.iter_rows().enumerate() {
        for (s, v) in row.iter().enumerate() {
            if v.widen() > threshold {
                targets[s].insert(t);
            }
        }
    }
    SparseMapping {
        mean,
        std,
        threshold,
        targets,
    }
}

/// A source report relabeled onto target features.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferredReport {
    pub source: GroupKey,
    /// Union of the member features' target sets; `None` when unmapped.
    pub target: Option<GroupKey>,
    pub mapped: bool,
    pub concepts: Vec<RankedConcept>,
}

/// Move every explained source report onto its target features.
pub fn transfer_concepts(
    mapping: &[BTreeSet<usize>],
    source_reports: &ReportStore,
) -> Vec<TransferredReport> {
    source_reports
        .values()
        .filter(|r| r.is_explained())
        .map(|r| {
            let targets: BTreeSet<usize> = r
                .features
                .features()
                .iter()
                .filter_map(|&s| mapping.get(s))
                .flatten()
                .copied()
                .collect();
            let mapped = !targets.is_empty();
            TransferredReport {
                source: r.features.clone(),
                target: mapped.then(|| GroupKey::new(targets.into_iter().collect())),
                mapped,
                concepts: r.concepts.clone(),
            }
        })
        .collect()
}
