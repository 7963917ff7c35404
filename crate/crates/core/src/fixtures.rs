//! Synthetic instances with planted ground truth.
//!
//! Three units are planted on a background of near-uniform representation
//! rows: feature 3, feature 7 and the group {10, 12}. Each unit owns sixteen
//! highly activating rows and sixteen counterfactual rows that share the
//! unit's context features but stay silent on the unit itself. On the caption
//! side every unit has a family of captions naming two true concepts and one
//! spurious term, and a counterfactual family that repeats the spurious term
//! next to two filler words. Image embeddings sit next to their family's
//! caption embeddings, so extraction should keep the true concepts and drop
//! the spurious one.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::{GroupKey, ALPHA_STD_MULTIPLIER, DEFAULT_BETA, DEFAULT_MIN_IMAGES};
use crate::concepts::DEFAULT_SCORE_THRESHOLD;
use crate::data::{CaptionCorpus, Lexicon, PosTag, RepresentationMatrix};
use crate::error::{Error, Result};
use crate::femb;
use crate::matrix::Matrix;
use crate::report::{to_json_pretty, write_atomic};
use crate::retrieval::DEFAULT_TOP_K;

pub const STOPWORDS: [&str; 20] = [
    "a", "an", "the", "of", "with", "on", "in", "near", "and", "at", "by", "under", "beside",
    "from", "to", "is", "are", "this", "that", "its",
];

pub const DISCARD_TERMS: [&str; 4] = ["photo", "image", "picture", "view"];

pub const NOUNS: [&str; 134] = [
    "dog",
    "cat",
    "horse",
    "cow",
    "sheep",
    "goat",
    "bird",
    "duck",
    "owl",
    "eagle",
    "fish",
    "shark",
    "whale",
    "frog",
    "snake",
    "turtle",
    "rabbit",
    "mouse",
    "bear",
    "lion",
    "tiger",
    "zebra",
    "giraffe",
    "elephant",
    "monkey",
    "fox",
    "wolf",
    "deer",
    "squirrel",
    "bee",
    "butterfly",
    "spider",
    "car",
    "truck",
    "bus",
    "bicycle",
    "boat",
    "train",
    "plane",
    "tractor",
    "wagon",
    "rocket",
    "house",
    "tower",
    "bridge",
    "castle",
    "church",
    "barn",
    "tent",
    "window",
    "door",
    "roof",
    "wall",
    "fence",
    "meadow",
    "field",
    "garden",
    "beach",
    "river",
    "lake",
    "mountain",
    "hill",
    "valley",
    "desert",
    "island",
    "cloud",
    "sky",
    "sun",
    "moon",
    "star",
    "snow",
    "rain",
    "ice",
    "stone",
    "rock",
    "sand",
    "grass",
    "tree",
    "flower",
    "leaf",
    "branch",
    "log",
    "moss",
    "forest",
    "mushroom",
    "curtain",
    "stage",
    "lamp",
    "chair",
    "table",
    "bed",
    "sofa",
    "shelf",
    "book",
    "cup",
    "bottle",
    "plate",
    "bowl",
    "spoon",
    "knife",
    "clock",
    "mirror",
    "pillow",
    "blanket",
    "basket",
    "hat",
    "shoe",
    "coat",
    "scarf",
    "glove",
    "ring",
    "guitar",
    "piano",
    "drum",
    "violin",
    "ball",
    "kite",
    "balloon",
    "umbrella",
    "ladder",
    "bench",
    "statue",
    "fountain",
    "candle",
    "shell",
    "feather",
    "bone",
    "pebble",
    "crown",
    "anchor",
    "lantern",
    "wheel",
    "rope",
    "nest",
];

pub const ADJECTIVES: [&str; 32] = [
    "shaggy", "corded", "velvet", "speckled", "red", "blue", "green", "yellow", "white", "black",
    "brown", "golden", "silver", "wooden", "metal", "striped", "spotted", "furry", "fluffy",
    "shiny", "rusty", "tiny", "huge", "old", "young", "wet", "dry", "bright", "dark", "round",
    "square", "tall",
];

pub const VERBS: [&str; 10] = [
    "running", "jumping", "sitting", "flying", "swimming", "sleeping", "eating", "standing",
    "climbing", "playing",
];

/// Cut used for the planted group, below the default alpha.
pub const FIXTURE_GROUP_ALPHA: f64 = 0.35;

const SINGLE_VALUE: f64 = 0.64;
const GROUP_VALUE: f64 = 0.45;
const SILENT_VALUE: f64 = 0.01;
const UNIT_ROWS: usize = 16;
const HIGH_FAMILY: usize = 6;
const LOW_FAMILY: usize = 10;
const BACKGROUND_NOISE: f64 = 0.05;
const CONTEXT_NOISE: f64 = 0.05;
const CAPTION_NOISE: f64 = 0.3;
const IMAGE_NOISE: f64 = 0.1;

/// Connecting words around the three content slots of a caption.
const TEMPLATES: [[&str; 3]; 5] = [
    ["a photo of a", "with the", "near a"],
    ["the", "and a", "beside the"],
    ["an image of the", "on a", "by the"],
    ["a", "under the", "and the"],
    ["this picture of a", "with a", "in the"],
];

struct UnitSpec {
    features: &'static [usize],
    value: f64,
    true_terms: [&'static str; 2],
    spurious: &'static str,
    fillers: [&'static str; 2],
    class_name: &'static str,
    group_alpha: bool,
}

const UNITS: [UnitSpec; 3] = [
    UnitSpec {
        features: &[3],
        value: SINGLE_VALUE,
        true_terms: ["shaggy", "corded"],
        spurious: "grass",
        fillers: ["fence", "meadow"],
        class_name: "komondor",
        group_alpha: false,
    },
    UnitSpec {
        features: &[7],
        value: SINGLE_VALUE,
        true_terms: ["velvet", "curtain"],
        spurious: "red",
        fillers: ["stage", "lamp"],
        class_name: "theater_curtain",
        group_alpha: false,
    },
    UnitSpec {
        features: &[10, 12],
        value: GROUP_VALUE,
        true_terms: ["mushroom", "speckled"],
        spurious: "forest",
        fillers: ["moss", "log"],
        class_name: "agaric",
        group_alpha: true,
    },
];

const OTHER_CLASS: &str = "other";
const UNIT_CLASS_WEIGHT: f64 = 2.0;
const OTHER_CLASS_WEIGHT: f64 = 0.15;
/// High rows per unit labeled as the catch-all class.
const MISLABELED_HIGH: usize = 4;

pub const REPRESENTATIONS_FILE: &str = "representations.femb";
pub const IMAGE_EMBEDDINGS_FILE: &str = "image_embeddings.femb";
pub const CAPTION_EMBEDDINGS_FILE: &str = "caption_embeddings.femb";
pub const CAPTIONS_FILE: &str = "captions.jsonl";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const HEAD_FILE: &str = "head.femb";
pub const CLASSES_FILE: &str = "classes.json";
pub const LABELS_FILE: &str = "labels.json";
pub const TARGET_FILE: &str = "target_representations.femb";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "engine.conf";

/// The full vocabulary: stopwords, discard terms and content words.
pub fn vocabulary() -> Vec<&'static str> {
    STOPWORDS
        .iter()
        .chain(&DISCARD_TERMS)
        .chain(&NOUNS)
        .chain(&ADJECTIVES)
        .chain(&VERBS)
        .copied()
        .collect()
}

fn content_words() -> Vec<&'static str> {
    NOUNS
        .iter()
        .chain(&ADJECTIVES)
        .chain(&VERBS)
        .copied()
        .collect()
}

/// Lexicon covering the closed vocabulary.
pub fn fixture_lexicon() -> Lexicon {
    let tagged = NOUNS
        .iter()
        .map(|w| (*w, PosTag::Noun))
        .chain(ADJECTIVES.iter().map(|w| (*w, PosTag::Adj)))
        .chain(VERBS.iter().map(|w| (*w, PosTag::Verb)));
    Lexicon::new(STOPWORDS, DISCARD_TERMS, tagged).expect("fixture vocabulary is disjoint")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSizes {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_captions: usize,
    pub dim: usize,
}

impl Default for FixtureSizes {
    fn default() -> Self {
        Self {
            n_samples: 2000,
            n_features: 64,
            n_captions: 400,
            dim: 32,
        }
    }
}

impl FixtureSizes {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.n_samples, 32, "n_samples"),
            (self.n_features, 8, "n_features"),
            (self.n_captions, 200, "n_captions"),
            (self.dim, 16, "dim"),
        ];
        for (value, min, name) in checks {
            if value < min {
                return Err(Error::Size(format!(
                    "{name} = {value}, need at least {min}"
                )));
            }
        }
        let planted_rows = UNITS.len() * 2 * UNIT_ROWS;
        if self.n_samples < planted_rows {
            return Err(Error::Size(format!(
                "n_samples = {}, the planted units alone need {planted_rows}",
                self.n_samples
            )));
        }
        let top_feature = UNITS
            .iter()
            .flat_map(|u| u.features)
            .max()
            .copied()
            .unwrap_or(0);
        if self.n_features <= top_feature + 1 {
            return Err(Error::Size(format!(
                "n_features = {}, the planted features need more than {}",
                self.n_features,
                top_feature + 1
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUnit {
    pub features: GroupKey,
    /// High-set cut for this unit; `None` means the default alpha.
    pub alpha: Option<f64>,
    pub true_concepts: Vec<String>,
    pub spurious: Vec<String>,
    pub fillers: Vec<String>,
    pub high_samples: Vec<usize>,
    pub low_samples: Vec<usize>,
    pub context: Vec<usize>,
    pub class: usize,
    /// High rows labeled with the catch-all class; the head predicts the
    /// unit class for them.
    pub mislabeled: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub sizes: FixtureSizes,
    pub group_alpha: f64,
    pub units: Vec<PlantedUnit>,
    /// `target[:, c] = source[:, permutation[c]]`.
    pub permutation: Vec<usize>,
    pub class_names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedInstance {
    pub truth: GroundTruth,
    pub representations: Matrix<f32>,
    pub image_embeddings: Matrix<f32>,
    pub caption_embeddings: Matrix<f32>,
    pub corpus: CaptionCorpus,
    pub lexicon: Lexicon,
    pub head: Matrix<f32>,
    pub labels: Vec<usize>,
    pub target: Matrix<f32>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= norm;
    }
}

fn random_unit(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..k).map(|_| gauss(rng)).collect();
    normalize(&mut v);
    v
}

fn narrow(data: Vec<f64>, rows: usize, cols: usize) -> Matrix<f32> {
    Matrix::new(rows, cols, data.into_iter().map(|v| v as f32).collect())
        .expect("generator shapes are consistent")
}

fn caption_text(rng: &mut ChaCha8Rng, words: &[&str; 3]) -> String {
    let t = TEMPLATES.choose(rng).expect("templates are non-empty");
    format!(
        "{} {} {} {} {} {}",
        t[0], words[0], t[1], words[1], t[2], words[2]
    )
}

enum Role {
    Background,
    High(usize),
    Low(usize),
}

/// Build a planted instance and verify it with the brute-force oracle.
pub fn generate_planted(seed: u64, sizes: &FixtureSizes) -> Result<PlantedInstance> {
    sizes.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let FixtureSizes {
        n_samples: n,
        n_features: r,
        n_captions: m,
        dim: k,
    } = *sizes;

    // representations
    let mut h = vec![0.0f64; n * r];
    for row in h.chunks_mut(r) {
        for v in row.iter_mut() {
            *v = 1.0 + BACKGROUND_NOISE * gauss(&mut rng);
        }
        normalize(row);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let planted: BTreeSet<usize> = UNITS.iter().flat_map(|u| u.features).copied().collect();
    let free: Vec<usize> = (0..r).filter(|i| !planted.contains(i)).collect();
    let context_len = (r / 2).min(free.len());
    let mut roles: Vec<Role> = (0..n).map(|_| Role::Background).collect();
    let mut units = Vec::with_capacity(UNITS.len());
    for (u, spec) in UNITS.iter().enumerate() {
        let rows = &order[u * 2 * UNIT_ROWS..(u + 1) * 2 * UNIT_ROWS];
        let mut high = rows[..UNIT_ROWS].to_vec();
        let mut low = rows[UNIT_ROWS..].to_vec();
        high.sort_unstable();
        low.sort_unstable();
        let mut context: Vec<usize> = free
            .choose_multiple(&mut rng, context_len)
            .copied()
            .collect();
        context.sort_unstable();

        let rest = (1.0 - spec.features.len() as f64 * spec.value * spec.value).sqrt()
            / (context_len as f64).sqrt();
        for &j in &high {
            let row = &mut h[j * r..(j + 1) * r];
            row.fill(0.0);
            for &f in spec.features {
                row[f] = spec.value;
            }
            for &c in &context {
                row[c] = rest * (1.0 + CONTEXT_NOISE * gauss(&mut rng));
            }
            normalize(row);
            roles[j] = Role::High(u);
        }
        let even = 1.0 / (context_len as f64).sqrt();
        for &j in &low {
            let row = &mut h[j * r..(j + 1) * r];
            row.fill(0.0);
            for &f in spec.features {
                row[f] = SILENT_VALUE;
            }
            for &c in &context {
                row[c] = even * (1.0 + CONTEXT_NOISE * gauss(&mut rng));
            }
            normalize(row);
            roles[j] = Role::Low(u);
        }
        units.push(PlantedUnit {
            features: GroupKey::new(spec.features.to_vec()),
            alpha: spec.group_alpha.then_some(FIXTURE_GROUP_ALPHA),
            true_concepts: spec.true_terms.iter().map(|s| s.to_string()).collect(),
            spurious: vec![spec.spurious.to_string()],
            fillers: spec.fillers.iter().map(|s| s.to_string()).collect(),
            mislabeled: high[UNIT_ROWS - MISLABELED_HIGH..].to_vec(),
            high_samples: high,
            low_samples: low,
            context,
            class: u,
        });
    }

    // captions
    let content = content_words();
    let word_vectors: BTreeMap<&str, Vec<f64>> = content
        .iter()
        .map(|w| (*w, random_unit(&mut rng, k)))
        .collect();
    let reserved: BTreeSet<&str> = UNITS
        .iter()
        .flat_map(|u| u.true_terms.iter().chain(&u.fillers).chain([&u.spurious]))
        .copied()
        .collect();
    let background_words: Vec<&str> = content
        .iter()
        .copied()
        .filter(|w| !reserved.contains(w))
        .collect();

    // (family, words): family None for background captions
    type Draft<'a> = (Option<(usize, bool)>, [&'a str; 3]);
    let mut drafts: Vec<Draft> = Vec::with_capacity(m);
    for (u, spec) in UNITS.iter().enumerate() {
        for _ in 0..HIGH_FAMILY {
            let mut w = [spec.true_terms[0], spec.true_terms[1], spec.spurious];
            w.shuffle(&mut rng);
            drafts.push((Some((u, true)), w));
        }
        for _ in 0..LOW_FAMILY {
            let mut w = [spec.spurious, spec.fillers[0], spec.fillers[1]];
            w.shuffle(&mut rng);
            drafts.push((Some((u, false)), w));
        }
    }
    while drafts.len() < m {
        let picked: Vec<&str> = background_words
            .choose_multiple(&mut rng, 3)
            .copied()
            .collect();
        drafts.push((None, [picked[0], picked[1], picked[2]]));
    }
    drafts.shuffle(&mut rng);

    let mut texts = Vec::with_capacity(m);
    let mut caption_emb = Vec::with_capacity(m * k);
    let mut high_family: Vec<Vec<usize>> = vec![Vec::new(); UNITS.len()];
    let mut low_family: Vec<Vec<usize>> = vec![Vec::new(); UNITS.len()];
    let mut background_captions = Vec::new();
    for (id, (family, words)) in drafts.iter().enumerate() {
        texts.push(caption_text(&mut rng, words));
        let noise = random_unit(&mut rng, k);
        let mut e: Vec<f64> = noise.iter().map(|v| CAPTION_NOISE * v).collect();
        for w in words {
            for (x, v) in e.iter_mut().zip(&word_vectors[w]) {
                *x += v;
            }
        }
        normalize(&mut e);
        caption_emb.extend(e);
        match family {
            Some((u, true)) => high_family[*u].push(id),
            Some((u, false)) => low_family[*u].push(id),
            None => background_captions.push(id),
        }
    }

    // image embeddings
    let mut image_emb = Vec::with_capacity(n * k);
    for role in &roles {
        let pool = match role {
            Role::Background => &background_captions,
            Role::High(u) => &high_family[*u],
            Role::Low(u) => &low_family[*u],
        };
        let c = *pool.choose(&mut rng).expect("caption pools are non-empty");
        let noise = random_unit(&mut rng, k);
        let mut e: Vec<f64> = caption_emb[c * k..(c + 1) * k]
            .iter()
            .zip(&noise)
            .map(|(a, b)| a + IMAGE_NOISE * b)
            .collect();
        normalize(&mut e);
        image_emb.extend(e);
    }

    // classifier head and labels
    let o = UNITS.len() + 1;
    let mut head = vec![0.0f64; o * r];
    for (u, spec) in UNITS.iter().enumerate() {
        for &f in spec.features {
            head[u * r + f] = UNIT_CLASS_WEIGHT;
        }
    }
    for v in &mut head[UNITS.len() * r..] {
        *v = OTHER_CLASS_WEIGHT;
    }
    // counterfactual rows carry their unit's label and a few high rows carry
    // the catch-all label, so both show up as failures of the head
    let mut labels: Vec<usize> = roles
        .iter()
        .map(|role| match role {
            Role::Background => UNITS.len(),
            Role::High(u) | Role::Low(u) => *u,
        })
        .collect();
    for unit in &units {
        for &j in &unit.mislabeled {
            labels[j] = UNITS.len();
        }
    }
    let mut class_names: Vec<String> = UNITS.iter().map(|u| u.class_name.to_string()).collect();
    class_names.push(OTHER_CLASS.to_string());

    // permuted copy for transfer
    let mut permutation: Vec<usize> = (0..r).collect();
    permutation.shuffle(&mut rng);
    let mut target = vec![0.0f64; n * r];
    for j in 0..n {
        for (c, &src) in permutation.iter().enumerate() {
            target[j * r + c] = h[j * r + src];
        }
    }

    let instance = PlantedInstance {
        truth: GroundTruth {
            seed,
            sizes: *sizes,
            group_alpha: FIXTURE_GROUP_ALPHA,
            units,
            permutation,
            class_names,
        },
        representations: narrow(h, n, r),
        image_embeddings: narrow(image_emb, n, k),
        caption_embeddings: narrow(caption_emb, m, k),
        corpus: CaptionCorpus::new(texts),
        lexicon: fixture_lexicon(),
        head: narrow(head, o, r),
        labels,
        target: narrow(target, n, r),
    };
    self_check(&instance)?;
    Ok(instance)
}

impl PlantedInstance {
    /// Bytes of every emitted file, keyed by file name.
    pub fn files(&self) -> BTreeMap<&'static str, Vec<u8>> {
        let mut out = BTreeMap::new();
        out.insert(REPRESENTATIONS_FILE, femb::encode(&self.representations));
        out.insert(IMAGE_EMBEDDINGS_FILE, femb::encode(&self.image_embeddings));
        out.insert(
            CAPTION_EMBEDDINGS_FILE,
            femb::encode(&self.caption_embeddings),
        );
        out.insert(CAPTIONS_FILE, self.corpus.to_jsonl().into_bytes());
        out.insert(LEXICON_FILE, to_json_pretty(&self.lexicon));
        out.insert(HEAD_FILE, femb::encode(&self.head));
        out.insert(CLASSES_FILE, to_json_pretty(&self.truth.class_names));
        out.insert(LABELS_FILE, to_json_pretty(&self.labels));
        out.insert(TARGET_FILE, femb::encode(&self.target));
        out.insert(GROUND_TRUTH_FILE, to_json_pretty(&self.truth));
        out.insert(CONFIG_FILE, self.config_text().into_bytes());
        out
    }

    fn config_text(&self) -> String {
        format!(
            "# synthetic instance, seed {seed}\n\
             representations = {REPRESENTATIONS_FILE}\n\
             image_embeddings = {IMAGE_EMBEDDINGS_FILE}\n\
             caption_embeddings = {CAPTION_EMBEDDINGS_FILE}\n\
             captions = {CAPTIONS_FILE}\n\
             lexicon = {LEXICON_FILE}\n\
             head = {HEAD_FILE}\n\
             classes = {CLASSES_FILE}\n\
             labels = {LABELS_FILE}\n\
             transfer_target = {TARGET_FILE}\n\
             group_alpha = {group_alpha}\n\
             out = out\n\
             seed = {seed}\n",
            seed = self.truth.seed,
            group_alpha = self.truth.group_alpha,
        )
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for (name, bytes) in self.files() {
            write_atomic(dir.join(name), &bytes)?;
        }
        Ok(())
    }
}

pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn widened_unit_rows(m: &Matrix<f32>) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|row| {
            let mut v: Vec<f64> = row.iter().map(|x| *x as f64).collect();
            normalize(&mut v);
            v
        })
        .collect()
}

fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Terms of a caption under the fixture lexicon: content words plus
/// adjacent content-word pairs.
fn oracle_terms(text: &str, content: &BTreeSet<&str>) -> BTreeSet<String> {
    let tokens: Vec<&str> = text.split(' ').collect();
    let mut out = BTreeSet::new();
    for (i, t) in tokens.iter().enumerate() {
        if content.contains(t) {
            out.insert(t.to_string());
            if i + 1 < tokens.len() && content.contains(tokens[i + 1]) {
                out.insert(format!("{} {}", t, tokens[i + 1]));
            }
        }
    }
    out
}

/// Terms scoring at least the default threshold over the given images, with
/// the confidence matrix materialized and every row fully sorted.
fn oracle_ranked(
    images: &[&Vec<f64>],
    captions: &[Vec<f64>],
    caption_terms: &[BTreeSet<String>],
) -> BTreeSet<String> {
    let mut per_image: Vec<Vec<(usize, f64)>> = Vec::with_capacity(images.len());
    for img in images {
        let mut row: Vec<(usize, f64)> = captions
            .iter()
            .enumerate()
            .map(|(p, c)| (p, plain_dot(img, c)))
            .collect();
        row.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        row.truncate(DEFAULT_TOP_K);
        per_image.push(row);
    }
    let candidates: BTreeSet<&String> = per_image
        .iter()
        .flatten()
        .flat_map(|(p, _)| &caption_terms[*p])
        .collect();
    candidates
        .into_iter()
        .filter(|term| {
            let total: f64 = per_image
                .iter()
                .map(|hits| {
                    hits.iter()
                        .map(|(p, c)| {
                            if caption_terms[*p].contains(*term) {
                                *c
                            } else {
                                0.0
                            }
                        })
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum();
            total / images.len() as f64 >= DEFAULT_SCORE_THRESHOLD
        })
        .cloned()
        .collect()
}

/// Brute-force check that the planted sets and concepts are exactly what a
/// literal evaluation recovers.
fn self_check(inst: &PlantedInstance) -> Result<()> {
    let fail = |msg: String| Err(Error::SelfCheck(msg));
    let h = widened_unit_rows(&inst.representations);
    let n = h.len();
    let r = h[0].len();
    let entries = (n * r) as f64;
    let mean = h.iter().flatten().sum::<f64>() / entries;
    let var = h
        .iter()
        .flatten()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / entries;
    let default_alpha = mean + ALPHA_STD_MULTIPLIER * var.sqrt();
    let col_mean: Vec<f64> = (0..r)
        .map(|i| h.iter().map(|row| row[i]).sum::<f64>() / n as f64)
        .collect();

    let images = widened_unit_rows(&inst.image_embeddings);
    let captions = widened_unit_rows(&inst.caption_embeddings);
    let content: BTreeSet<&str> = content_words().into_iter().collect();
    let caption_terms: Vec<BTreeSet<String>> = inst
        .corpus
        .iter()
        .map(|(_, text)| oracle_terms(text, &content))
        .collect();

    for unit in &inst.truth.units {
        let feats = unit.features.features();
        let alpha = unit.alpha.unwrap_or(default_alpha);
        let high: Vec<usize> = (0..n)
            .filter(|&j| feats.iter().all(|&i| h[j][i] > alpha))
            .collect();
        if high != unit.high_samples {
            return fail(format!(
                "high set of {} differs from the planted rows",
                unit.features
            ));
        }
        if high.len() <= DEFAULT_MIN_IMAGES {
            return fail(format!(
                "{} has too few highly activating rows",
                unit.features
            ));
        }
        let mu: Vec<f64> = (0..r)
            .map(|i| {
                if feats.contains(&i) {
                    0.0
                } else {
                    high.iter().map(|&j| h[j][i]).sum::<f64>() / high.len() as f64
                }
            })
            .collect();
        let low: Vec<usize> = (0..n)
            .filter(|&j| {
                feats.iter().all(|&i| h[j][i] < col_mean[i])
                    && (0..r)
                        .filter(|i| !feats.contains(i))
                        .map(|i| h[j][i] * mu[i])
                        .sum::<f64>()
                        >= DEFAULT_BETA
            })
            .collect();
        if low != unit.low_samples {
            return fail(format!(
                "counterfactual set of {} differs from the planted rows",
                unit.features
            ));
        }

        let high_imgs: Vec<&Vec<f64>> = high.iter().map(|&j| &images[j]).collect();
        let low_imgs: Vec<&Vec<f64>> = low.iter().map(|&j| &images[j]).collect();
        let high_ranked = oracle_ranked(&high_imgs, &captions, &caption_terms);
        let low_ranked = oracle_ranked(&low_imgs, &captions, &caption_terms);
        let kept: BTreeSet<String> = high_ranked.difference(&low_ranked).cloned().collect();
        let truth: BTreeSet<String> = unit.true_concepts.iter().cloned().collect();
        if kept != truth {
            return fail(format!(
                "{}: recovered {kept:?}, planted {truth:?}",
                unit.features
            ));
        }
        for s in &unit.spurious {
            if !(high_ranked.contains(s) && low_ranked.contains(s)) {
                return fail(format!(
                    "{}: spurious term {s:?} is not shared",
                    unit.features
                ));
            }
        }
    }
    Ok(())
}

/// Number of features planted to pass the census gate in [`census_instance`].
pub const CENSUS_PLANTED: usize = 13;
const CENSUS_VALUE: f64 = 0.75;

/// 2000 × 64 representation matrix on which exactly [`CENSUS_PLANTED`]
/// features have more than ten samples above the default alpha. Feature
/// `CENSUS_PLANTED` gets exactly ten such samples and must not count.
pub fn census_instance(seed: u64) -> Result<RepresentationMatrix<f64>> {
    let (n, r) = (2000usize, 64usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = vec![0.0f64; n * r];
    for row in h.chunks_mut(r) {
        for v in row.iter_mut() {
            *v = 1.0 + BACKGROUND_NOISE * gauss(&mut rng);
        }
        normalize(row);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut next = order.into_iter();
    let rest = (1.0 - CENSUS_VALUE * CENSUS_VALUE).sqrt() / ((r / 2) as f64).sqrt();
    for f in 0..=CENSUS_PLANTED {
        let count = if f < CENSUS_PLANTED {
            DEFAULT_MIN_IMAGES + 1
        } else {
            DEFAULT_MIN_IMAGES
        };
        let others: Vec<usize> = (0..r).filter(|&i| i != f).collect();
        for _ in 0..count {
            let j = next.next().expect("enough rows for the census plant");
            let row = &mut h[j * r..(j + 1) * r];
            row.fill(0.0);
            row[f] = CENSUS_VALUE;
            for &c in others.choose_multiple(&mut rng, r / 2) {
                row[c] = rest * (1.0 + CONTEXT_NOISE * rng.random_range(-1.0..1.0));
            }
            normalize(row);
        }
    }
    RepresentationMatrix::normalized(Matrix::new(n, r, h)?)
}
