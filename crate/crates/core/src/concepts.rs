//! Word Score ranking and contrastive filtering of concepts.
//!
//! The Word Score of a term over a set of images is the mean, over images,
//! of the best confidence among that image's retrieved captions, where a
//! caption that does not contain the term contributes 0:
//!
//! ```text
//! score(w) = (1/Q) * Σ_q max_p { C[q][p] if w occurs in caption p, else 0 }
//! ```

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::activation::GroupKey;
use crate::data::{CaptionCorpus, Lexicon};
use crate::report::{sig6, sig6_opt};
use crate::retrieval::CaptionHits;
use crate::scalar::Scalar;
use crate::text::{extract_terms, TermBag};

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedConcept {
    pub term: String,
    #[serde(serialize_with = "sig6")]
    pub score: f64,
}

/// Descending score, then term ascending.
pub fn concept_order(a: &RankedConcept, b: &RankedConcept) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.term.cmp(&b.term))
}

pub fn word_score<T: Scalar>(term: &str, hits: &[CaptionHits<T>], bag: &TermBag) -> f64 {
    if hits.is_empty() {
        return 0.0;
    }
    let total: f64 = hits
        .iter()
        .map(|image| {
            image
                .iter()
                .map(|h| {
                    if bag.occurs(term, h.caption_id) {
                        h.confidence.widen()
                    } else {
                        0.0
                    }
                })
                .fold(None, |best: Option<f64>, c| {
                    Some(best.map_or(c, |b| b.max(c)))
                })
                .unwrap_or(0.0)
        })
        .sum();
    total / hits.len() as f64
}

/// Every bag term scoring at least `threshold`, best first.
pub fn rank_concepts<T: Scalar>(
    bag: &TermBag,
    hits: &[CaptionHits<T>],
    threshold: f64,
) -> Vec<RankedConcept> {
    let mut ranked: Vec<RankedConcept> = bag
        .terms()
        .iter()
        .map(|t| RankedConcept {
            term: t.clone(),
            score: word_score(t, hits, bag),
        })
        .filter(|c| c.score >= threshold)
        .collect();
    ranked.sort_by(concept_order);
    ranked
}

/// Bag of every caption retrieved for the given images.
pub fn bag_for_hits<T: Scalar>(
    hits: &[CaptionHits<T>],
    corpus: &CaptionCorpus,
    lexicon: &Lexicon,
) -> TermBag {
    let ids: BTreeSet<usize> = hits
        .iter()
        .flat_map(|image| image.iter().map(|h| h.caption_id))
        .collect();
    extract_terms(
        ids.into_iter()
            .filter_map(|id| corpus.get(id).map(|text| (id, text))),
        lexicon,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutcome {
    pub kept: Vec<RankedConcept>,
    pub discarded: BTreeSet<String>,
    /// Ranking of the counterfactual set itself.
    pub low_ranked: Vec<RankedConcept>,
}

/// Remove from `high` every term that also ranks on the counterfactual set.
pub fn subtract_ranked(high: &[RankedConcept], low: &[RankedConcept]) -> ContrastiveOutcome {
    let low_terms: BTreeSet<&str> = low.iter().map(|c| c.term.as_str()).collect();
    let (discarded, kept): (Vec<_>, Vec<_>) = high
        .iter()
        .cloned()
        .partition(|c| low_terms.contains(c.term.as_str()));
    ContrastiveOutcome {
        kept,
        discarded: discarded.into_iter().map(|c| c.term).collect(),
        low_ranked: low.to_vec(),
    }
}

/// Rank the counterfactual captions and drop their concepts from `high`.
pub fn contrastive_filter<T: Scalar>(
    high: &[RankedConcept],
    low_hits: &[CaptionHits<T>],
    corpus: &CaptionCorpus,
    lexicon: &Lexicon,
    threshold: f64,
) -> ContrastiveOutcome {
    let low_bag = bag_for_hits(low_hits, corpus, lexicon);
    let low_ranked = rank_concepts(&low_bag, low_hits, threshold);
    subtract_ranked(high, &low_ranked)
}

/// Strongest single (image, caption) pair backing a concept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptEvidence {
    pub term: String,
    pub image: usize,
    pub caption: usize,
    #[serde(serialize_with = "sig6")]
    pub confidence: f64,
}

/// For each concept, the best-confidence hit whose caption contains it.
/// `image_ids[q]` names the sample behind `hits[q]`.
pub fn collect_evidence<T: Scalar>(
    concepts: &[RankedConcept],
    hits: &[CaptionHits<T>],
    image_ids: &[usize],
    bag: &TermBag,
) -> Vec<ConceptEvidence> {
    concepts
        .iter()
        .filter_map(|c| {
            let mut best: Option<ConceptEvidence> = None;
            for (image, &sample) in hits.iter().zip(image_ids) {
                for h in image.iter() {
                    if !bag.occurs(&c.term, h.caption_id) {
                        continue;
                    }
                    let conf = h.confidence.widen();
                    let better = match &best {
                        None => true,
                        Some(b) => conf > b.confidence,
                    };
                    if better {
                        best = Some(ConceptEvidence {
                            term: c.term.clone(),
                            image: sample,
                            caption: h.caption_id,
                            confidence: conf,
                        });
                    }
                }
            }
            best
        })
        .collect()
}

/// Reports keyed by the feature set they describe.
pub type ReportStore = BTreeMap<GroupKey, ConceptReport>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportStatus {
    Explained,
    /// Too few highly activating samples to extract concepts.
    InsufficientlyActivating,
}

/// Concepts for one feature or feature group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptReport {
    pub features: GroupKey,
    pub status: ReportStatus,
    pub concepts: Vec<RankedConcept>,
    pub discarded: BTreeSet<String>,
    pub evidence: Vec<ConceptEvidence>,
    #[serde(serialize_with = "sig6")]
    pub threshold: f64,
    #[serde(serialize_with = "sig6_opt", default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub n_high: usize,
    #[serde(default)]
    pub n_low: usize,
}

impl ConceptReport {
    pub fn insufficient(features: GroupKey, threshold: f64, alpha: f64, n_high: usize) -> Self {
        Self {
            features,
            status: ReportStatus::InsufficientlyActivating,
            concepts: Vec::new(),
            discarded: BTreeSet::new(),
            evidence: Vec::new(),
            threshold,
            alpha: Some(alpha),
            n_high,
            n_low: 0,
        }
    }

    pub fn terms(&self) -> Vec<&str> {
        self.concepts.iter().map(|c| c.term.as_str()).collect()
    }

    pub fn is_explained(&self) -> bool {
        self.status == ReportStatus::Explained && !self.concepts.is_empty()
    }
}
