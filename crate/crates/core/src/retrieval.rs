//! Caption retrieval by embedding similarity.
//!
//! Confidences are cosine similarities between image (crop) embeddings and
//! caption embeddings. The corpus is streamed in row blocks so the full
//! image-by-caption confidence matrix is never held in memory; each image
//! keeps a bounded running top-k.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use crate::data::{CaptionIndex, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{dot, Scalar};

pub const DEFAULT_TOP_K: usize = 5;
pub const DEFAULT_BLOCK_SIZE: usize = 8192;

/// Images handled per parallel work item.
const IMAGE_TILE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit<T> {
    pub caption_id: usize,
    pub confidence: T,
}

impl<T: Scalar> Hit<T> {
    /// Ranking order: higher confidence first, then lower caption id.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .confidence
            .widen()
            .total_cmp(&self.confidence.widen())
            .then(self.caption_id.cmp(&other.caption_id))
    }
}

/// Retrieved captions for one image, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionHits<T> {
    pub hits: Vec<Hit<T>>,
}

impl<T: Scalar> CaptionHits<T> {
    pub fn new(mut hits: Vec<Hit<T>>) -> Self {
        hits.sort_by(Hit::rank_cmp);
        Self { hits }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Hit<T>> {
        self.hits.iter()
    }
}

/// Heap entry whose `Ord` puts better hits higher.
struct Ranked<T>(Hit<T>);

impl<T: Scalar> PartialEq for Ranked<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Ranked<T> {}

impl<T: Scalar> PartialOrd for Ranked<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Ranked<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // rank_cmp says Less for the better hit; flip so better is greater
        other.0.rank_cmp(&self.0)
    }
}

/// Bounded top-k accumulator. Merging is order-independent under the
/// (confidence desc, id asc) ranking.
pub struct TopK<T> {
    k: usize,
    heap: BinaryHeap<Reverse<Ranked<T>>>,
}

impl<T: Scalar> TopK<T> {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub fn push(&mut self, hit: Hit<T>) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(Ranked(hit)));
            return;
        }
        let worst = &self.heap.peek().expect("k >= 1").0;
        if Ranked(hit).cmp(worst) == Ordering::Greater {
            self.heap.pop();
            self.heap.push(Reverse(Ranked(hit)));
        }
    }

    pub fn merge(&mut self, other: TopK<T>) {
        for Reverse(Ranked(hit)) in other.heap {
            self.push(hit);
        }
    }

    pub fn finish(self) -> CaptionHits<T> {
        CaptionHits::new(self.heap.into_iter().map(|Reverse(Ranked(h))| h).collect())
    }
}

fn check_dims<T: Scalar>(b: &EmbeddingMatrix<T>, a: &EmbeddingMatrix<T>) -> Result<()> {
    b.require_normalized("image embeddings")?;
    a.require_normalized("caption embeddings")?;
    if b.dim() != a.dim() {
        return Err(Error::DimensionMismatch {
            context: "embedding dimension",
            expected: b.dim(),
            found: a.dim(),
        });
    }
    Ok(())
}

/// Dense confidences `B · A_blockᵀ`, one row per image.
pub fn confidence_block<T: Scalar>(
    b: &EmbeddingMatrix<T>,
    a_block: &EmbeddingMatrix<T>,
) -> Result<Matrix<T>> {
    check_dims(b, a_block)?;
    let mut out = Matrix::zeros(b.rows(), a_block.rows());
    for q in 0..b.rows() {
        let img = b.row(q);
        for (p, slot) in out.row_mut(q).iter_mut().enumerate() {
            *slot = T::narrow(dot(img, a_block.row(p)));
        }
    }
    Ok(out)
}

/// Block-streaming top-k caption retrieval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaptionMatcher {
    pub k: usize,
    pub block_size: usize,
}

impl Default for CaptionMatcher {
    fn default() -> Self {
        Self {
            k: DEFAULT_TOP_K,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

impl CaptionMatcher {
    pub fn new(k: usize, block_size: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidValue("top_k must be at least 1".into()));
        }
        if block_size == 0 {
            return Err(Error::InvalidValue("block_size must be at least 1".into()));
        }
        Ok(Self { k, block_size })
    }

    /// Top `k` captions per image row of `b`, in row order.
    ///
    /// `k` larger than the corpus is rejected. Image tiles run in parallel on
    /// the ambient rayon pool; output does not depend on the pool size.
    pub fn top_k_captions<T: Scalar>(
        &self,
        b: &EmbeddingMatrix<T>,
        index: &CaptionIndex<T>,
    ) -> Result<Vec<CaptionHits<T>>> {
        let a = index.embeddings();
        check_dims(b, a)?;
        if self.k > a.rows() {
            return Err(Error::InvalidValue(format!(
                "top_k {} exceeds corpus size {}",
                self.k,
                a.rows()
            )));
        }
        let tiles: Vec<(usize, usize)> = (0..b.rows())
            .step_by(IMAGE_TILE)
            .map(|s| (s, (s + IMAGE_TILE).min(b.rows())))
            .collect();
        let per_tile: Vec<Vec<CaptionHits<T>>> = tiles
            .par_iter()
            .map(|&(start, end)| self.scan_tile(b, a, start, end))
            .collect();
        Ok(per_tile.into_iter().flatten().collect())
    }

    fn scan_tile<T: Scalar>(
        &self,
        b: &EmbeddingMatrix<T>,
        a: &EmbeddingMatrix<T>,
        start: usize,
        end: usize,
    ) -> Vec<CaptionHits<T>> {
        let dim = a.dim();
        let m = a.rows();
        let mut heaps: Vec<TopK<T>> = (start..end).map(|_| TopK::new(self.k)).collect();
        let mut block_start = 0;
        while block_start < m {
            let block_end = (block_start + self.block_size).min(m);
            let slab = a.matrix().row_block(block_start, block_end);
            for (heap, q) in heaps.iter_mut().zip(start..end) {
                let img = b.row(q);
                for (offset, caption) in slab.chunks_exact(dim).enumerate() {
                    heap.push(Hit {
                        caption_id: block_start + offset,
                        confidence: T::narrow(dot(img, caption)),
                    });
                }
            }
            block_start = block_end;
        }
        heaps.into_iter().map(TopK::finish).collect()
    }
}

/// Convenience wrapper with an explicit block size.
pub fn top_k_captions<T: Scalar>(
    b: &EmbeddingMatrix<T>,
    index: &CaptionIndex<T>,
    k: usize,
    block_size: usize,
) -> Result<Vec<CaptionHits<T>>> {
    CaptionMatcher::new(k, block_size)?.top_k_captions(b, index)
}
