//! Discovery of co-activating feature groups and the similarity gate that
//! marks a group interpretable.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::{top_group_of_sample, FeatureGroup, GroupKey};
use crate::data::{EmbeddingMatrix, RepresentationMatrix};
use crate::error::{Error, Result};
use crate::report::sig6_opt;
use crate::scalar::Scalar;

pub const DEFAULT_GAMMA: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub features: GroupKey,
    pub samples: Vec<usize>,
    #[serde(serialize_with = "sig6_opt")]
    pub avg_sim: Option<f64>,
    pub interpretable: bool,
}

impl GroupEntry {
    pub fn group(&self) -> FeatureGroup {
        FeatureGroup {
            features: self.features.clone(),
            samples: self.samples.clone(),
        }
    }
}

/// Groups keyed by their canonical feature set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroupCatalog {
    entries: BTreeMap<GroupKey, GroupEntry>,
    /// Row count of the representation matrix the groups came from.
    n_samples: usize,
}

impl GroupCatalog {
    pub fn new(n_samples: usize) -> Self {
        Self {
            entries: BTreeMap::new(),
            n_samples,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &GroupKey) -> Option<&GroupEntry> {
        self.entries.get(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = &GroupEntry> {
        self.entries.values()
    }

    pub fn keys(&self) -> impl Iterator<Item = &GroupKey> {
        self.entries.keys()
    }

    pub fn interpretable(&self) -> impl Iterator<Item = &GroupEntry> {
        self.entries.values().filter(|e| e.interpretable)
    }

    pub fn insert(&mut self, entry: GroupEntry) {
        self.entries.insert(entry.features.clone(), entry);
    }

    /// JSON export: one object per group, ordered by key.
    pub fn to_rows(&self) -> Vec<&GroupEntry> {
        self.entries.values().collect()
    }

    pub fn from_rows(n_samples: usize, rows: Vec<GroupEntry>) -> Self {
        let mut c = Self::new(n_samples);
        for r in rows {
            c.insert(r);
        }
        c
    }
}

/// Bucket samples by their above-`alpha` feature set and keep buckets with
/// more than `min_images` samples.
pub fn discover_groups<T: Scalar>(
    h: &RepresentationMatrix<T>,
    alpha: f64,
    min_images: usize,
) -> Result<GroupCatalog> {
    h.require_normalized("representation matrix")?;
    let keys: Vec<GroupKey> = (0..h.n_samples())
        .into_par_iter()
        .map(|j| top_group_of_sample(h, j, alpha))
        .collect();
    let mut buckets: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
    for (j, key) in keys.into_iter().enumerate() {
        if !key.is_empty() {
            buckets.entry(key).or_default().push(j);
        }
    }
    let mut catalog = GroupCatalog::new(h.n_samples());
    for (key, samples) in buckets {
        if samples.len() > min_images {
            catalog.insert(GroupEntry {
                features: key,
                samples,
                avg_sim: None,
                interpretable: false,
            });
        }
    }
    Ok(catalog)
}

/// Mean cosine similarity over unordered pairs of the given rows.
///
/// Uses `Σ_{a≠b} <v_a, v_b> = |Σ v|² − Σ |v|²` so the cost is linear in the
/// group size. Returns `None` for fewer than two samples.
pub fn average_pairwise_similarity<T: Scalar>(
    embeddings: &EmbeddingMatrix<T>,
    samples: &[usize],
) -> Option<f64> {
    let n = samples.len();
    if n < 2 {
        return None;
    }
    let mut sum = vec![0.0f64; embeddings.dim()];
    let mut self_dots = 0.0f64;
    for &s in samples {
        let row = embeddings.row(s);
        for (acc, v) in sum.iter_mut().zip(row) {
            *acc += v.widen();
        }
        self_dots += row.iter().map(|v| v.widen() * v.widen()).sum::<f64>();
    }
    let total: f64 = sum.iter().map(|v| v * v).sum();
    let pairs = (n * (n - 1)) as f64;
    Some((total - self_dots) / pairs)
}

/// Fill in average similarities and flag groups at or above `gamma`.
pub fn flag_interpretable<T: Scalar>(
    catalog: &GroupCatalog,
    image_embeddings: &EmbeddingMatrix<T>,
    gamma: f64,
) -> Result<GroupCatalog> {
    image_embeddings.require_normalized("image embeddings")?;
    if image_embeddings.rows() != catalog.n_samples {
        return Err(Error::Alignment {
            expected: catalog.n_samples,
            found: image_embeddings.rows(),
        });
    }
    let entries: Vec<GroupEntry> = catalog
        .entries
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|e| {
            let avg = average_pairwise_similarity(image_embeddings, &e.samples);
            GroupEntry {
                features: e.features.clone(),
                samples: e.samples.clone(),
                avg_sim: avg,
                interpretable: avg.is_some_and(|a| a >= gamma),
            }
        })
        .collect();
    Ok(GroupCatalog::from_rows(catalog.n_samples, entries))
}
