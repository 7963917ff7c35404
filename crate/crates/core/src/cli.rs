//! Subcommand implementations behind the `concept-engine` binary.
//!
//! Every command reads its inputs through [`EngineConfig`], writes its
//! reports into the output directory and returns the in-memory result.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::activation::{
    default_alpha, feature_census, ActivationThresholds, FeatureCensus, GroupKey,
};
use crate::concepts::{ConceptReport, ReportStore};
use crate::config::EngineConfig;
use crate::data::{
    CaptionCorpus, CaptionIndex, ClassifierHead, EmbeddingMatrix, Lexicon, RepresentationMatrix,
};
use crate::error::{Error, Result};
use crate::explain::{explain_failures, FailureExplanation};
use crate::femb;
use crate::fixtures::{generate_planted, FixtureSizes, PlantedInstance};
use crate::groups::{discover_groups, flag_interpretable, GroupCatalog};
use crate::pipeline::{explain_target, ExtractionInputs, ExtractionParams};
use crate::report::{write_json, write_jsonl};
use crate::retrieval::CaptionMatcher;
use crate::transfer::{
    fit_transfer, sparsify, transfer_concepts, SparseMapping, TransferHyper, TransferMap,
    TransferredReport,
};

pub const CENSUS_FILE: &str = "census.json";
pub const CONCEPTS_FILE: &str = "concepts.json";
pub const GROUPS_FILE: &str = "groups.json";
pub const FAILURES_FILE: &str = "failures.jsonl";
pub const TRANSFER_MAP_FILE: &str = "transfer_map.femb";
pub const TRANSFER_SIDECAR_FILE: &str = "transfer_map.json";
pub const TRANSFERRED_FILE: &str = "transferred_concepts.json";

fn read_representations(path: &Path) -> Result<RepresentationMatrix<f32>> {
    RepresentationMatrix::normalized(femb::read_matrix(path)?)
}

fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix<f32>> {
    femb::read_embedding_file(path)?.into_normalized()
}

fn read_json<V: serde::de::DeserializeOwned>(path: &Path) -> Result<V> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// Inputs shared by extraction, failures and transfer.
struct ExtractionData {
    image_embeddings: EmbeddingMatrix<f32>,
    index: CaptionIndex<f32>,
    lexicon: Lexicon,
}

impl ExtractionData {
    fn load(cfg: &EngineConfig) -> Result<Self> {
        let image_embeddings =
            read_embeddings(cfg.require("image_embeddings", &cfg.image_embeddings)?)?;
        let captions =
            read_embeddings(cfg.require("caption_embeddings", &cfg.caption_embeddings)?)?;
        let corpus = CaptionCorpus::read(cfg.require("captions", &cfg.captions)?)?;
        let lexicon = match &cfg.lexicon {
            Some(p) => Lexicon::read(p)?,
            None => Lexicon::default(),
        };
        Ok(Self {
            image_embeddings,
            index: CaptionIndex::new(captions, corpus)?,
            lexicon,
        })
    }
}

/// Default alpha unless the config overrides it.
fn feature_alpha(cfg: &EngineConfig, h: &RepresentationMatrix<f32>) -> f64 {
    cfg.alpha.unwrap_or_else(|| default_alpha(h))
}

/// Cut for a target: `group_alpha` applies to multi-feature groups.
fn target_alpha(cfg: &EngineConfig, h: &RepresentationMatrix<f32>, target: &GroupKey) -> f64 {
    match cfg.group_alpha {
        Some(g) if target.len() > 1 => g,
        _ => feature_alpha(cfg, h),
    }
}

fn group_discovery_alpha(cfg: &EngineConfig, h: &RepresentationMatrix<f32>) -> f64 {
    cfg.group_alpha.unwrap_or_else(|| feature_alpha(cfg, h))
}

fn extraction_params(cfg: &EngineConfig, alpha: f64) -> Result<ExtractionParams> {
    Ok(ExtractionParams {
        thresholds: ActivationThresholds::new(alpha, cfg.epsilon, cfg.beta, cfg.min_images)?,
        matcher: CaptionMatcher::new(cfg.top_k, cfg.block_size)?,
        score_threshold: cfg.score_threshold,
        low_score_threshold: cfg.low_threshold(),
        max_concepts: cfg.max_concepts,
    })
}

fn crops_for(cfg: &EngineConfig, target: &GroupKey) -> Result<Option<EmbeddingMatrix<f32>>> {
    let Some(dir) = &cfg.crops_dir else {
        return Ok(None);
    };
    let path = dir.join(format!("crops_{}.femb", target.file_stem()));
    if !path.exists() {
        return Ok(None);
    }
    read_embeddings(&path).map(Some)
}

pub fn cmd_census(cfg: &EngineConfig) -> Result<FeatureCensus> {
    let h = read_representations(cfg.require("representations", &cfg.representations)?)?;
    let census = feature_census(&h, feature_alpha(cfg, &h), cfg.min_images);
    write_json(cfg.out.join(CENSUS_FILE), &census)?;
    Ok(census)
}

fn build_catalog(
    cfg: &EngineConfig,
    h: &RepresentationMatrix<f32>,
    image_embeddings: &EmbeddingMatrix<f32>,
) -> Result<GroupCatalog> {
    let catalog = discover_groups(h, group_discovery_alpha(cfg, h), cfg.min_images)?;
    flag_interpretable(&catalog, image_embeddings, cfg.gamma)
}

pub fn cmd_groups(cfg: &EngineConfig) -> Result<GroupCatalog> {
    let h = read_representations(cfg.require("representations", &cfg.representations)?)?;
    let images = read_embeddings(cfg.require("image_embeddings", &cfg.image_embeddings)?)?;
    let catalog = build_catalog(cfg, &h, &images)?;
    write_json(cfg.out.join(GROUPS_FILE), &catalog.to_rows())?;
    Ok(catalog)
}

/// Single features passing the census gate plus interpretable groups of two
/// or more features.
fn default_targets(
    cfg: &EngineConfig,
    h: &RepresentationMatrix<f32>,
    catalog: &GroupCatalog,
) -> BTreeSet<GroupKey> {
    let census = feature_census(h, feature_alpha(cfg, h), cfg.min_images);
    let mut targets: BTreeSet<GroupKey> =
        census.features.into_iter().map(GroupKey::single).collect();
    targets.extend(
        catalog
            .interpretable()
            .filter(|e| e.features.len() > 1)
            .map(|e| e.features.clone()),
    );
    targets
}

fn extract_all(
    cfg: &EngineConfig,
    h: &RepresentationMatrix<f32>,
    data: &ExtractionData,
    targets: &BTreeSet<GroupKey>,
) -> Result<ReportStore> {
    let inputs = ExtractionInputs {
        h,
        image_embeddings: &data.image_embeddings,
        index: &data.index,
        lexicon: &data.lexicon,
    };
    let mut store = ReportStore::new();
    for target in targets {
        let params = extraction_params(cfg, target_alpha(cfg, h, target))?;
        let crops = crops_for(cfg, target)?;
        let report = explain_target(&inputs, target, &params, crops.as_ref())?;
        store.insert(target.clone(), report);
    }
    Ok(store)
}

/// Extract concepts for the given targets, or for every default target when
/// `targets` is empty.
pub fn cmd_extract(cfg: &EngineConfig, targets: &[GroupKey]) -> Result<Vec<ConceptReport>> {
    let h = read_representations(cfg.require("representations", &cfg.representations)?)?;
    let data = ExtractionData::load(cfg)?;
    let targets: BTreeSet<GroupKey> = if targets.is_empty() {
        let catalog = build_catalog(cfg, &h, &data.image_embeddings)?;
        default_targets(cfg, &h, &catalog)
    } else {
        targets.iter().cloned().collect()
    };
    let store = extract_all(cfg, &h, &data, &targets)?;
    let reports: Vec<ConceptReport> = store.into_values().collect();
    write_json(cfg.out.join(CONCEPTS_FILE), &reports)?;
    Ok(reports)
}

fn read_head(cfg: &EngineConfig) -> Result<ClassifierHead<f32>> {
    let weights = femb::read_matrix(cfg.require("head", &cfg.head)?)?;
    match &cfg.classes {
        Some(p) => ClassifierHead::new(weights, read_json(p)?),
        None => ClassifierHead::unnamed(weights),
    }
}

pub fn cmd_failures(cfg: &EngineConfig) -> Result<Vec<FailureExplanation>> {
    let h = read_representations(cfg.require("representations", &cfg.representations)?)?;
    let head = read_head(cfg)?;
    let labels: Vec<usize> = read_json(cfg.require("labels", &cfg.labels)?)?;
    let data = ExtractionData::load(cfg)?;
    let catalog = build_catalog(cfg, &h, &data.image_embeddings)?;
    let targets = default_targets(cfg, &h, &catalog);
    let reports = extract_all(cfg, &h, &data, &targets)?;
    let failures = explain_failures(&head, &h, &labels, cfg.top_m, &catalog, &reports)?;
    write_jsonl(cfg.out.join(FAILURES_FILE), &failures)?;
    Ok(failures)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappingEntry {
    pub source: usize,
    pub targets: BTreeSet<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub sparsify: SparseMapping,
    pub mapping: Vec<MappingEntry>,
    pub reports: Vec<TransferredReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferOutcome {
    pub map: TransferMap<f32>,
    pub report: TransferReport,
}

/// Fit the map from the transfer target onto the explained representations,
/// then carry the source concepts across.
pub fn cmd_transfer(cfg: &EngineConfig) -> Result<TransferOutcome> {
    let source = read_representations(cfg.require("representations", &cfg.representations)?)?;
    let target = read_representations(cfg.require("transfer_target", &cfg.transfer_target)?)?;
    let hyper = TransferHyper {
        lambda: cfg.lambda,
        epochs: cfg.epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        shuffle: cfg.shuffle,
        seed: cfg.seed,
    };
    let map = fit_transfer(&target, &source, cfg.transfer_mode, &hyper)?;
    let sparse = sparsify(&map);

    let data = ExtractionData::load(cfg)?;
    let catalog = build_catalog(cfg, &source, &data.image_embeddings)?;
    let targets = default_targets(cfg, &source, &catalog);
    let source_reports = extract_all(cfg, &source, &data, &targets)?;
    let reports = transfer_concepts(&sparse.targets, &source_reports);
    let mapping = sparse
        .targets
        .iter()
        .enumerate()
        .filter(|(_, t)| !t.is_empty())
        .map(|(source, t)| MappingEntry {
            source,
            targets: t.clone(),
        })
        .collect();
    let report = TransferReport {
        sparsify: sparse,
        mapping,
        reports,
    };
    map.save(
        cfg.out.join(TRANSFER_MAP_FILE),
        cfg.out.join(TRANSFER_SIDECAR_FILE),
    )?;
    write_json(cfg.out.join(TRANSFERRED_FILE), &report)?;
    Ok(TransferOutcome { map, report })
}

/// Generate the default-size planted instance into `out`.
pub fn cmd_fixtures_generate(seed: u64, out: &Path) -> Result<PlantedInstance> {
    let inst = generate_planted(seed, &FixtureSizes::default())?;
    inst.write(out)?;
    Ok(inst)
}

/// Output paths written by a command, for reporting.
pub fn outputs_of(command: &str, cfg: &EngineConfig) -> Vec<PathBuf> {
    let names: &[&str] = match command {
        "census" => &[CENSUS_FILE],
        "extract" => &[CONCEPTS_FILE],
        "groups" => &[GROUPS_FILE],
        "failures" => &[FAILURES_FILE],
        "transfer" => &[TRANSFER_MAP_FILE, TRANSFER_SIDECAR_FILE, TRANSFERRED_FILE],
        _ => &[],
    };
    names.iter().map(|n| cfg.out.join(n)).collect()
}
