//! Domain types shared by every stage of the engine.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{l2_normalize_rows, Matrix};
use crate::scalar::Scalar;

/// Tolerance on unit row norms for matrices flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-5;

fn check_finite<T: Scalar>(m: &Matrix<T>, what: &str) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::InvalidValue(format!(
            "{what} contains non-finite entries"
        )));
    }
    Ok(())
}

/// Per-sample feature vectors of the model being explained (N samples by r
/// features).
#[derive(Debug, Clone, PartialEq)]
pub struct RepresentationMatrix<T> {
    data: Matrix<T>,
    normalized: bool,
}

impl<T: Scalar> RepresentationMatrix<T> {
    /// Wrap a matrix as-is. The result is not flagged as normalized.
    pub fn from_raw(data: Matrix<T>) -> Result<Self> {
        if data.rows() == 0 || data.cols() == 0 {
            return Err(Error::InvalidValue(
                "representation matrix needs at least one sample and one feature".into(),
            ));
        }
        check_finite(&data, "representation matrix")?;
        Ok(Self {
            data,
            normalized: false,
        })
    }

    /// Wrap and L2-normalize every row.
    pub fn normalized(data: Matrix<T>) -> Result<Self> {
        let raw = Self::from_raw(data)?;
        Ok(Self {
            data: l2_normalize_rows(&raw.data)?,
            normalized: true,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.data.rows()
    }

    pub fn n_features(&self) -> usize {
        self.data.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn require_normalized(&self, what: &'static str) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized(what))
        }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[T] {
        self.data.row(j)
    }

    #[inline]
    pub fn value(&self, sample: usize, feature: usize) -> T {
        self.data.get(sample, feature)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.data
    }

    /// Mean of one feature over all samples, accumulated in `f64`.
    pub fn column_mean(&self, feature: usize) -> f64 {
        let sum: f64 = (0..self.n_samples())
            .map(|j| self.value(j, feature).widen())
            .sum();
        sum / self.n_samples() as f64
    }

    /// Same samples with the feature axis reordered: output column `c` is
    /// input column `order[c]`.
    pub fn permute_features(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n_features() {
            return Err(Error::DimensionMismatch {
                context: "feature permutation",
                expected: self.n_features(),
                found: order.len(),
            });
        }
        let mut out = Matrix::zeros(self.n_samples(), self.n_features());
        for j in 0..self.n_samples() {
            for (c, &src) in order.iter().enumerate() {
                out.set(j, c, self.value(j, src));
            }
        }
        Ok(Self {
            data: out,
            normalized: self.normalized,
        })
    }
}

/// Dense CLIP-space embeddings: caption text embeddings or image (crop)
/// embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    data: Matrix<T>,
    normalized: bool,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    pub fn from_raw(data: Matrix<T>) -> Result<Self> {
        check_finite(&data, "embedding matrix")?;
        Ok(Self {
            data,
            normalized: false,
        })
    }

    pub fn normalized(data: Matrix<T>) -> Result<Self> {
        check_finite(&data, "embedding matrix")?;
        Ok(Self {
            data: l2_normalize_rows(&data)?,
            normalized: true,
        })
    }

    /// Normalize in place of a raw matrix; no-op if already flagged.
    pub fn into_normalized(self) -> Result<Self> {
        if self.normalized {
            Ok(self)
        } else {
            Self::normalized(self.data)
        }
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn require_normalized(&self, what: &'static str) -> Result<()> {
        if self.normalized {
            Ok(())
        } else {
            Err(Error::NotNormalized(what))
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        self.data.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.data
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.data
    }

    /// Subset of rows, keeping the normalization flag.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(indices),
            normalized: self.normalized,
        }
    }
}

/// Caption strings, where the caption id is the row index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptionCorpus {
    captions: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CaptionRecord {
    id: usize,
    text: String,
}

impl CaptionCorpus {
    pub fn new(captions: Vec<String>) -> Self {
        Self { captions }
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    pub fn get(&self, id: usize) -> Option<&str> {
        self.captions.get(id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &str)> {
        self.captions.iter().map(String::as_str).enumerate()
    }

    /// Load a JSONL corpus of `{"id": int, "text": string}` records.
    ///
    /// Records may appear in any order but ids must cover `0..M` exactly.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut records = Vec::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CaptionRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            records.push(rec);
        }
        records.sort_by_key(|r| r.id);
        for (expected, rec) in records.iter().enumerate() {
            if rec.id != expected {
                return Err(Error::IdGap {
                    expected,
                    found: rec.id,
                });
            }
        }
        Ok(Self {
            captions: records.into_iter().map(|r| r.text).collect(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, text) in self.iter() {
            let rec = CaptionRecord {
                id,
                text: text.to_owned(),
            };
            out.push_str(&serde_json::to_string(&rec).expect("caption record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}

/// Caption embeddings paired row-for-row with their caption texts.
#[derive(Debug, Clone)]
pub struct CaptionIndex<T> {
    embeddings: EmbeddingMatrix<T>,
    corpus: CaptionCorpus,
}

impl<T: Scalar> CaptionIndex<T> {
    pub fn new(embeddings: EmbeddingMatrix<T>, corpus: CaptionCorpus) -> Result<Self> {
        if embeddings.rows() != corpus.len() {
            return Err(Error::Alignment {
                expected: corpus.len(),
                found: embeddings.rows(),
            });
        }
        Ok(Self { embeddings, corpus })
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix<T> {
        &self.embeddings
    }

    pub fn corpus(&self) -> &CaptionCorpus {
        &self.corpus
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }
}

/// Linear classification head `U` (o classes by r features), kept raw.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<T> {
    weights: Matrix<T>,
    class_names: Vec<String>,
}

impl<T: Scalar> ClassifierHead<T> {
    pub fn new(weights: Matrix<T>, class_names: Vec<String>) -> Result<Self> {
        if weights.rows() < 2 {
            return Err(Error::InvalidValue(format!(
                "classifier head needs at least 2 classes, got {}",
                weights.rows()
            )));
        }
        if class_names.len() != weights.rows() {
            return Err(Error::DimensionMismatch {
                context: "class names",
                expected: weights.rows(),
                found: class_names.len(),
            });
        }
        check_finite(&weights, "classifier head")?;
        Ok(Self {
            weights,
            class_names,
        })
    }

    /// Head with generated names `class_0`, `class_1`, ...
    pub fn unnamed(weights: Matrix<T>) -> Result<Self> {
        let names = (0..weights.rows()).map(|c| format!("class_{c}")).collect();
        Self::new(weights, names)
    }

    pub fn n_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn n_features(&self) -> usize {
        self.weights.cols()
    }

    pub fn class_row(&self, class: usize) -> &[T] {
        self.weights.row(class)
    }

    pub fn class_name(&self, class: usize) -> &str {
        &self.class_names[class]
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Verb,
    Adj,
    Phrase,
}

/// Word lists driving term extraction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
    #[serde(default)]
    pub discard_terms: BTreeSet<String>,
    #[serde(default)]
    pub content_terms: BTreeMap<String, PosTag>,
}

impl Lexicon {
    pub fn new(
        stopwords: impl IntoIterator<Item = impl Into<String>>,
        discard_terms: impl IntoIterator<Item = impl Into<String>>,
        content_terms: impl IntoIterator<Item = (impl Into<String>, PosTag)>,
    ) -> Result<Self> {
        let lex = Self {
            stopwords: stopwords
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .collect(),
            discard_terms: discard_terms
                .into_iter()
                .map(|s| s.into().to_lowercase())
                .collect(),
            content_terms: content_terms
                .into_iter()
                .map(|(t, tag)| (t.into().to_lowercase(), tag))
                .collect(),
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self
            .content_terms
            .keys()
            .find(|t| self.stopwords.contains(*t))
        {
            return Err(Error::InvalidValue(format!(
                "lexicon term {w:?} is both a stopword and a content term"
            )));
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lex: Lexicon = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        lex.stopwords = lex.stopwords.iter().map(|s| s.to_lowercase()).collect();
        lex.discard_terms = lex.discard_terms.iter().map(|s| s.to_lowercase()).collect();
        lex.content_terms = lex
            .content_terms
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        lex.validate()?;
        Ok(lex)
    }
}
