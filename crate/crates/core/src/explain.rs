//! Failure attribution for a linear classification head.
//!
//! The contribution of feature `i` to class `y` for sample `j` is
//! `h_ji * U_yi`; the logit is their sum.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::GroupKey;
use crate::concepts::{ConceptReport, ReportStore};
use crate::data::{ClassifierHead, RepresentationMatrix};
use crate::error::{Error, Result};
use crate::groups::GroupCatalog;
use crate::report::sig6;
use crate::scalar::{dot, Scalar};

pub const DEFAULT_TOP_M: usize = 3;

fn check_width<T: Scalar>(head: &ClassifierHead<T>, h_j: &[T]) -> Result<()> {
    if head.n_features() != h_j.len() {
        return Err(Error::DimensionMismatch {
            context: "classifier head width",
            expected: head.n_features(),
            found: h_j.len(),
        });
    }
    Ok(())
}

/// Per-class logits `U h_j`.
pub fn logits<T: Scalar>(head: &ClassifierHead<T>, h_j: &[T]) -> Result<Vec<f64>> {
    check_width(head, h_j)?;
    Ok((0..head.n_classes())
        .map(|c| dot(head.class_row(c), h_j))
        .collect())
}

/// Highest logit; the lower class index wins ties.
pub fn predict<T: Scalar>(head: &ClassifierHead<T>, h_j: &[T]) -> Result<usize> {
    let z = logits(head, h_j)?;
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contribution {
    pub feature: usize,
    #[serde(serialize_with = "sig6")]
    pub contribution: f64,
}

/// Every feature's contribution to class `y`, in feature order.
pub fn contributions<T: Scalar>(
    head: &ClassifierHead<T>,
    h_j: &[T],
    y: usize,
) -> Result<Vec<Contribution>> {
    check_width(head, h_j)?;
    if y >= head.n_classes() {
        return Err(Error::InvalidValue(format!(
            "class {y} out of range for a head with {} classes",
            head.n_classes()
        )));
    }
    Ok(h_j
        .iter()
        .zip(head.class_row(y))
        .enumerate()
        .map(|(feature, (h, u))| Contribution {
            feature,
            contribution: h.widen() * u.widen(),
        })
        .collect())
}

fn contribution_order(a: &Contribution, b: &Contribution) -> Ordering {
    b.contribution
        .total_cmp(&a.contribution)
        .then(a.feature.cmp(&b.feature))
}

/// The `m` largest contributions to class `y`, descending, lower feature
/// index first on ties.
pub fn top_contributors<T: Scalar>(
    head: &ClassifierHead<T>,
    h_j: &[T],
    y: usize,
    m: usize,
) -> Result<Vec<Contribution>> {
    if m == 0 {
        return Err(Error::InvalidValue("top_m must be at least 1".into()));
    }
    let mut all = contributions(head, h_j, y)?;
    all.sort_by(contribution_order);
    all.truncate(m);
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionSource {
    /// Smallest interpretable group containing the feature.
    Group,
    /// The feature's own report.
    Feature,
    Unexplained,
}

/// Concepts attached to one contributing feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConcepts {
    pub feature: usize,
    pub source: ResolutionSource,
    pub group: Option<GroupKey>,
    pub concepts: Vec<String>,
}

fn resolved(feature: usize, source: ResolutionSource, report: &ConceptReport) -> ResolvedConcepts {
    ResolvedConcepts {
        feature,
        source,
        group: Some(report.features.clone()),
        concepts: report.terms().into_iter().map(String::from).collect(),
    }
}

/// Look up concepts for each feature: the smallest interpretable group that
/// contains it and has a report, then the single-feature report, otherwise
/// unexplained. Equal-size groups resolve to the lower key.
pub fn resolve_concepts(
    features: &[usize],
    catalog: &GroupCatalog,
    reports: &ReportStore,
) -> Vec<ResolvedConcepts> {
    features
        .iter()
        .map(|&f| {
            let group = catalog
                .interpretable()
                .filter(|e| e.features.contains(f))
                .filter_map(|e| reports.get(&e.features))
                .min_by(|a, b| {
                    a.features
                        .len()
                        .cmp(&b.features.len())
                        .then_with(|| a.features.cmp(&b.features))
                });
            if let Some(report) = group {
                return resolved(f, ResolutionSource::Group, report);
            }
            if let Some(report) = reports.get(&GroupKey::single(f)) {
                return resolved(f, ResolutionSource::Feature, report);
            }
            ResolvedConcepts {
                feature: f,
                source: ResolutionSource::Unexplained,
                group: None,
                concepts: Vec::new(),
            }
        })
        .collect()
}

/// One misclassified sample and the concepts behind its prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureExplanation {
    pub sample_id: usize,
    pub true_label: Option<usize>,
    pub predicted_label: usize,
    pub predicted_class: String,
    pub top_features: Vec<Contribution>,
    pub concepts: Vec<ResolvedConcepts>,
}

/// Explain the prediction for one sample.
pub fn explain_sample<T: Scalar>(
    head: &ClassifierHead<T>,
    h: &RepresentationMatrix<T>,
    sample: usize,
    true_label: Option<usize>,
    top_m: usize,
    catalog: &GroupCatalog,
    reports: &ReportStore,
) -> Result<FailureExplanation> {
    let row = h.row(sample);
    let predicted = predict(head, row)?;
    let top = top_contributors(head, row, predicted, top_m)?;
    let features: Vec<usize> = top.iter().map(|c| c.feature).collect();
    Ok(FailureExplanation {
        sample_id: sample,
        true_label,
        predicted_label: predicted,
        predicted_class: head.class_name(predicted).to_string(),
        top_features: top,
        concepts: resolve_concepts(&features, catalog, reports),
    })
}

/// Explanations for every sample whose prediction differs from its label,
/// in sample order.
pub fn explain_failures<T: Scalar>(
    head: &ClassifierHead<T>,
    h: &RepresentationMatrix<T>,
    labels: &[usize],
    top_m: usize,
    catalog: &GroupCatalog,
    reports: &ReportStore,
) -> Result<Vec<FailureExplanation>> {
    if labels.len() != h.n_samples() {
        return Err(Error::Alignment {
            expected: h.n_samples(),
            found: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= head.n_classes()) {
        return Err(Error::InvalidValue(format!(
            "label {bad} out of range for a head with {} classes",
            head.n_classes()
        )));
    }
    let per_sample: Vec<Option<FailureExplanation>> = (0..h.n_samples())
        .into_par_iter()
        .map(|j| {
            let e = explain_sample(head, h, j, Some(labels[j]), top_m, catalog, reports)?;
            Ok((e.predicted_label != labels[j]).then_some(e))
        })
        .collect::<Result<_>>()?;
    Ok(per_sample.into_iter().flatten().collect())
}
