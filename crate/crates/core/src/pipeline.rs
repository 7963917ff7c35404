//! End-to-end concept extraction for one feature or feature group.

use crate::activation::{
    check_epsilon_below_alpha, group_highly_activating, lowly_activating, ActivationThresholds,
    GroupKey,
};
use crate::concepts::{
    bag_for_hits, collect_evidence, contrastive_filter, rank_concepts, ConceptReport, ReportStatus,
    DEFAULT_SCORE_THRESHOLD,
};
use crate::data::{CaptionIndex, EmbeddingMatrix, Lexicon, RepresentationMatrix};
use crate::error::{Error, Result};
use crate::retrieval::CaptionMatcher;
use crate::scalar::Scalar;

/// Everything read from disk that extraction needs.
pub struct ExtractionInputs<'a, T> {
    pub h: &'a RepresentationMatrix<T>,
    /// Whole-image embeddings, one row per sample of `h`.
    pub image_embeddings: &'a EmbeddingMatrix<T>,
    pub index: &'a CaptionIndex<T>,
    pub lexicon: &'a Lexicon,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractionParams {
    /// `alpha` here is the cut used for the high set of this target.
    pub thresholds: ActivationThresholds,
    pub matcher: CaptionMatcher,
    pub score_threshold: f64,
    /// Threshold applied when ranking the counterfactual set.
    pub low_score_threshold: f64,
    /// Keep at most this many concepts after filtering.
    pub max_concepts: Option<usize>,
}

impl ExtractionParams {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            thresholds: ActivationThresholds::with_alpha(alpha),
            matcher: CaptionMatcher::default(),
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            low_score_threshold: DEFAULT_SCORE_THRESHOLD,
            max_concepts: None,
        }
    }
}

/// Extract concepts for `target`.
///
/// `crops`, when given, holds one embedding per highly activating sample (in
/// ascending sample order) and replaces the whole-image rows for the high set.
pub fn explain_target<T: Scalar>(
    inputs: &ExtractionInputs<'_, T>,
    target: &GroupKey,
    params: &ExtractionParams,
    crops: Option<&EmbeddingMatrix<T>>,
) -> Result<ConceptReport> {
    let h = inputs.h;
    if target.is_empty() {
        return Err(Error::InvalidValue("empty feature group".into()));
    }
    target.check_bounds(h.n_features())?;
    if inputs.image_embeddings.rows() != h.n_samples() {
        return Err(Error::Alignment {
            expected: h.n_samples(),
            found: inputs.image_embeddings.rows(),
        });
    }
    let th = &params.thresholds;
    let alpha = th.alpha;
    let high = group_highly_activating(h, target, alpha);
    if !th.is_sufficient(high.len()) {
        return Ok(ConceptReport::insufficient(
            target.clone(),
            params.score_threshold,
            alpha,
            high.len(),
        ));
    }
    check_epsilon_below_alpha(h, target, th, alpha)?;
    let low = lowly_activating(h, target, &high, th)?;

    let high_emb = match crops {
        Some(c) => {
            if c.rows() != high.len() {
                return Err(Error::Alignment {
                    expected: high.len(),
                    found: c.rows(),
                });
            }
            c.clone()
        }
        None => inputs.image_embeddings.select_rows(&high),
    };
    let high_hits = params.matcher.top_k_captions(&high_emb, inputs.index)?;
    let bag = bag_for_hits(&high_hits, inputs.index.corpus(), inputs.lexicon);
    let ranked = rank_concepts(&bag, &high_hits, params.score_threshold);

    let low_hits = if low.is_empty() {
        Vec::new()
    } else {
        let low_emb = inputs.image_embeddings.select_rows(&low);
        params.matcher.top_k_captions(&low_emb, inputs.index)?
    };
    let outcome = contrastive_filter(
        &ranked,
        &low_hits,
        inputs.index.corpus(),
        inputs.lexicon,
        params.low_score_threshold,
    );
    let mut kept = outcome.kept;
    if let Some(max) = params.max_concepts {
        kept.truncate(max);
    }
    let evidence = collect_evidence(&kept, &high_hits, &high, &bag);
    Ok(ConceptReport {
        features: target.clone(),
        status: ReportStatus::Explained,
        concepts: kept,
        discarded: outcome.discarded,
        evidence,
        threshold: params.score_threshold,
        alpha: Some(alpha),
        n_high: high.len(),
        n_low: low.len(),
    })
}
