//! Highly activating sets, counterfactual (lowly activating) sets, and
//! per-sample top feature groups.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::RepresentationMatrix;
use crate::error::{Error, Result};
use crate::report::sig6;
use crate::scalar::Scalar;

/// Multiplier on the entry standard deviation in the default high-activation cut.
pub const ALPHA_STD_MULTIPLIER: f64 = 16.0;
pub const DEFAULT_BETA: f64 = 0.7;
/// A feature needs strictly more highly activating samples than this.
pub const DEFAULT_MIN_IMAGES: usize = 10;

/// Canonical (sorted, deduplicated) set of feature indices.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "Vec<usize>", from = "Vec<usize>")]
pub struct GroupKey(Vec<usize>);

impl GroupKey {
    pub fn new(mut features: Vec<usize>) -> Self {
        features.sort_unstable();
        features.dedup();
        Self(features)
    }

    pub fn single(feature: usize) -> Self {
        Self(vec![feature])
    }

    pub fn features(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, feature: usize) -> bool {
        self.0.binary_search(&feature).is_ok()
    }

    /// Underscore-joined form, usable in file names.
    pub fn file_stem(&self) -> String {
        self.0
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join("_")
    }

    pub fn check_bounds(&self, n_features: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidValue("feature group is empty".into()));
        }
        if let Some(&f) = self.0.iter().find(|&&f| f >= n_features) {
            return Err(Error::InvalidValue(format!(
                "feature {f} out of range for {n_features} features"
            )));
        }
        Ok(())
    }
}

impl From<Vec<usize>> for GroupKey {
    fn from(v: Vec<usize>) -> Self {
        Self::new(v)
    }
}

impl From<GroupKey> for Vec<usize> {
    fn from(k: GroupKey) -> Self {
        k.0
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for GroupKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let features = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidValue(format!("bad feature index {p:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let key = Self::new(features);
        if key.is_empty() {
            return Err(Error::InvalidValue("empty feature group".into()));
        }
        Ok(key)
    }
}

/// A feature set together with the samples that activate all of it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub features: GroupKey,
    pub samples: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EpsilonMode {
    /// Each group member's own column mean over all samples.
    FeatureMean,
    Explicit(f64),
}

impl FromStr for EpsilonMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mean" | "feature-mean" => Ok(Self::FeatureMean),
            other => other
                .parse::<f64>()
                .map(Self::Explicit)
                .map_err(|_| Error::InvalidValue(format!("bad epsilon {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationThresholds {
    pub alpha: f64,
    pub epsilon: EpsilonMode,
    pub beta: f64,
    pub min_images: usize,
}

impl ActivationThresholds {
    pub fn new(alpha: f64, epsilon: EpsilonMode, beta: f64, min_images: usize) -> Result<Self> {
        let t = Self {
            alpha,
            epsilon,
            beta,
            min_images,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            epsilon: EpsilonMode::FeatureMean,
            beta: DEFAULT_BETA,
            min_images: DEFAULT_MIN_IMAGES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidValue(format!(
                "beta {} outside [-1, 1]",
                self.beta
            )));
        }
        if self.min_images < 1 {
            return Err(Error::InvalidValue("min_images must be at least 1".into()));
        }
        if !self.alpha.is_finite() {
            return Err(Error::InvalidValue("alpha must be finite".into()));
        }
        Ok(())
    }

    pub fn epsilon_for<T: Scalar>(&self, h: &RepresentationMatrix<T>, feature: usize) -> f64 {
        match self.epsilon {
            EpsilonMode::FeatureMean => h.column_mean(feature),
            EpsilonMode::Explicit(v) => v,
        }
    }

    pub fn is_sufficient(&self, high_count: usize) -> bool {
        high_count > self.min_images
    }
}

/// `mean(H) + 16 * std(H)` over every entry of the matrix (population std).
pub fn default_alpha<T: Scalar>(h: &RepresentationMatrix<T>) -> f64 {
    let (mean, std) = h.matrix().entry_mean_std();
    mean + ALPHA_STD_MULTIPLIER * std
}

/// Samples whose value on `feature` is strictly above `alpha`, ascending.
pub fn highly_activating<T: Scalar>(
    h: &RepresentationMatrix<T>,
    feature: usize,
    alpha: f64,
) -> Vec<usize> {
    (0..h.n_samples())
        .filter(|&j| h.value(j, feature).widen() > alpha)
        .collect()
}

/// Samples strictly above `alpha` on every feature of the group.
pub fn group_highly_activating<T: Scalar>(
    h: &RepresentationMatrix<T>,
    group: &GroupKey,
    alpha: f64,
) -> Vec<usize> {
    (0..h.n_samples())
        .filter(|&j| {
            group
                .features()
                .iter()
                .all(|&i| h.value(j, i).widen() > alpha)
        })
        .collect()
}

/// Counterfactual samples for a feature group.
///
/// A sample qualifies when every group feature sits strictly below its
/// epsilon and its representation restricted to the remaining features has
/// dot product at least `beta` with the mean of the high set on those same
/// features.
pub fn lowly_activating<T: Scalar>(
    h: &RepresentationMatrix<T>,
    group: &GroupKey,
    t_set: &[usize],
    thresholds: &ActivationThresholds,
) -> Result<Vec<usize>> {
    if t_set.is_empty() {
        return Err(Error::EmptyHighSet);
    }
    group.check_bounds(h.n_features())?;
    let r = h.n_features();

    let mut in_group = vec![false; r];
    for &i in group.features() {
        in_group[i] = true;
    }

    // mean of the high set on the complement, zero on group columns so the
    // dot below can run over full rows
    let mut ordered = t_set.to_vec();
    ordered.sort_unstable();
    let mut mu = vec![0.0f64; r];
    for &j in &ordered {
        for (m, v) in mu.iter_mut().zip(h.row(j)) {
            *m += v.widen();
        }
    }
    let inv = 1.0 / t_set.len() as f64;
    for (i, m) in mu.iter_mut().enumerate() {
        *m = if in_group[i] { 0.0 } else { *m * inv };
    }

    let eps: Vec<(usize, f64)> = group
        .features()
        .iter()
        .map(|&i| (i, thresholds.epsilon_for(h, i)))
        .collect();

    let out = (0..h.n_samples())
        .filter(|&j| {
            let row = h.row(j);
            if !eps.iter().all(|&(i, e)| row[i].widen() < e) {
                return false;
            }
            let mut acc = 0.0f64;
            for (v, m) in row.iter().zip(&mu) {
                acc += v.widen() * m;
            }
            acc >= thresholds.beta
        })
        .collect();
    Ok(out)
}

/// Features on which `sample` is strictly above `alpha`.
pub fn top_group_of_sample<T: Scalar>(
    h: &RepresentationMatrix<T>,
    sample: usize,
    alpha: f64,
) -> GroupKey {
    GroupKey(
        h.row(sample)
            .iter()
            .enumerate()
            .filter(|(_, v)| v.widen() > alpha)
            .map(|(i, _)| i)
            .collect(),
    )
}

/// Error unless every group feature's epsilon is at or below `alpha`, which
/// guarantees the high and low sets are disjoint.
pub fn check_epsilon_below_alpha<T: Scalar>(
    h: &RepresentationMatrix<T>,
    group: &GroupKey,
    thresholds: &ActivationThresholds,
    alpha: f64,
) -> Result<()> {
    for &i in group.features() {
        let epsilon = thresholds.epsilon_for(h, i);
        if epsilon > alpha {
            return Err(Error::EpsilonAboveAlpha {
                feature: i,
                epsilon,
                alpha,
            });
        }
    }
    Ok(())
}

/// Counts of features with enough highly activating samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureCensus {
    pub total_features: usize,
    pub highly_activating_count: usize,
    #[serde(serialize_with = "sig6")]
    pub percentage: f64,
    #[serde(serialize_with = "sig6")]
    pub alpha: f64,
    pub min_images: usize,
    /// Features passing the gate, ascending.
    pub features: Vec<usize>,
}

pub fn feature_census<T: Scalar>(
    h: &RepresentationMatrix<T>,
    alpha: f64,
    min_images: usize,
) -> FeatureCensus {
    let r = h.n_features();
    let mut counts = vec![0usize; r];
    for j in 0..h.n_samples() {
        for (c, v) in counts.iter_mut().zip(h.row(j)) {
            if v.widen() > alpha {
                *c += 1;
            }
        }
    }
    let features: Vec<usize> = (0..r).filter(|&i| counts[i] > min_images).collect();
    FeatureCensus {
        total_features: r,
        highly_activating_count: features.len(),
        percentage: 100.0 * features.len() as f64 / r as f64,
        alpha,
        min_images,
        features,
    }
}
