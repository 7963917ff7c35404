//! Contrastive concept extraction for features of vision models.
//!
//! Given a representation matrix of a model over a probe set, image and
//! caption embeddings in a shared vision-language space and a caption corpus,
//! the engine finds the images that strongly activate a feature (or a group
//! of co-activating features), retrieves the captions closest to them, ranks
//! the words those captions share, and removes words that also describe
//! similar images on which the feature stays silent.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); files on
//! disk are always `f32`.

pub mod activation;
pub mod cli;
pub mod concepts;
pub mod config;
pub mod data;
pub mod error;
pub mod explain;
pub mod femb;
pub mod fixtures;
pub mod groups;
pub mod matrix;
pub mod pipeline;
pub mod report;
pub mod retrieval;
pub mod scalar;
pub mod text;
pub mod transfer;

pub use activation::{ActivationThresholds, EpsilonMode, FeatureGroup, GroupKey};
pub use concepts::{ConceptReport, RankedConcept, ReportStore};
pub use data::{
    CaptionCorpus, CaptionIndex, ClassifierHead, EmbeddingMatrix, Lexicon, RepresentationMatrix,
};
pub use error::{Error, Result};
pub use groups::GroupCatalog;
pub use matrix::Matrix;
pub use retrieval::{CaptionHits, CaptionMatcher, Hit};
pub use scalar::Scalar;
pub use transfer::{TransferMap, TransferMode};

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type RepresentationMatrix32 = RepresentationMatrix<f32>;
pub type RepresentationMatrix64 = RepresentationMatrix<f64>;
pub type EmbeddingMatrix32 = EmbeddingMatrix<f32>;
pub type EmbeddingMatrix64 = EmbeddingMatrix<f64>;
pub type CaptionIndex32 = CaptionIndex<f32>;
pub type CaptionIndex64 = CaptionIndex<f64>;
pub type ClassifierHead32 = ClassifierHead<f32>;
pub type ClassifierHead64 = ClassifierHead<f64>;
pub type TransferMap32 = TransferMap<f32>;
pub type TransferMap64 = TransferMap<f64>;
