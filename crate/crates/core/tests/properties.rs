mod common;

use std::collections::BTreeSet;

use concept_engine::activation::{
    group_highly_activating, highly_activating, lowly_activating, ActivationThresholds,
    EpsilonMode, GroupKey,
};
use concept_engine::concepts::{
    concept_order, rank_concepts, subtract_ranked, word_score, RankedConcept,
};
use concept_engine::data::{CaptionCorpus, CaptionIndex, ClassifierHead, Lexicon};
use concept_engine::explain::{contributions, top_contributors};
use concept_engine::femb;
use concept_engine::groups::{discover_groups, flag_interpretable};
use concept_engine::matrix::l2_normalize_rows;
use concept_engine::retrieval::{top_k_captions, CaptionHits, Hit};
use concept_engine::text::extract_terms_from_texts;
use concept_engine::{Matrix, RepresentationMatrix};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

struct ScoreCase {
    texts: Vec<String>,
    hits: Vec<CaptionHits<f64>>,
}

fn score_case(seed: u64, non_negative: bool) -> ScoreCase {
    let mut rng = rng(seed);
    let n_captions = rng.random_range(1..=10);
    let texts: Vec<String> = (0..n_captions)
        .map(|_| {
            let len = rng.random_range(1..=5);
            (0..len)
                .map(|_| word(rng.random_range(0..6)))
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let lo = if non_negative { 0.0 } else { -1.0 };
    let hits = (0..rng.random_range(1..=6))
        .map(|_| {
            let k = rng.random_range(1..=n_captions.min(5));
            CaptionHits::new(
                distinct(&mut rng, n_captions, k)
                    .into_iter()
                    .map(|caption_id| Hit {
                        caption_id,
                        confidence: uniform(&mut rng, lo, 1.0),
                    })
                    .collect(),
            )
        })
        .collect();
    ScoreCase { texts, hits }
}

fn clustered(seed: u64, n: usize, r: usize) -> RepresentationMatrix<f64> {
    let mut rng = rng(seed);
    let protos: Vec<Vec<usize>> = (0..4)
        .map(|_| {
            let k = rng.random_range(1..=3);
            distinct(&mut rng, r, k)
        })
        .collect();
    let mut data = Vec::with_capacity(n * r);
    for _ in 0..n {
        let p = &protos[rng.random_range(0..protos.len())];
        for i in 0..r {
            data.push(if p.contains(&i) {
                0.7
            } else {
                uniform(&mut rng, 0.0, 0.25)
            });
        }
    }
    RepresentationMatrix::normalized(Matrix::new(n, r, data).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalization_is_idempotent(seed: u64, rows in 1usize..20, cols in 1usize..20) {
        let m = gaussian_matrix(&mut rng(seed), rows, cols);
        let once = l2_normalize_rows(&m).unwrap();
        let twice = l2_normalize_rows(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
    }

    #[test]
    fn femb_round_trip(rows in 1usize..12, cols in 1usize..12, bits in prop::collection::vec(any::<u32>(), 144)) {
        let data: Vec<f32> = bits[..rows * cols].iter().map(|b| f32::from_bits(*b)).collect();
        let m = Matrix::new(rows, cols, data).unwrap();
        let back = femb::decode(&femb::encode(&m)).unwrap();
        prop_assert_eq!((back.rows(), back.cols()), (rows, cols));
        let got: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(&got[..], &bits[..rows * cols]);
    }

    #[test]
    fn word_score_ignores_order(seed: u64) {
        let case = score_case(seed, false);
        let bag = extract_terms_from_texts(&case.texts, &Lexicon::default());
        let mut shuffled = case.hits.clone();
        let mut r = rng(seed ^ 1);
        shuffled.shuffle(&mut r);
        for image in shuffled.iter_mut() {
            image.hits.shuffle(&mut r);
        }
        for t in bag.terms() {
            let a = word_score(t, &case.hits, &bag);
            let b = word_score(t, &shuffled, &bag);
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn word_score_is_bounded(seed: u64) {
        let case = score_case(seed, true);
        let bag = extract_terms_from_texts(&case.texts, &Lexicon::default());
        let top = case
            .hits
            .iter()
            .flat_map(|i| i.hits.iter().map(|h| h.confidence))
            .fold(0.0f64, f64::max);
        for t in bag.terms() {
            let s = word_score(t, &case.hits, &bag);
            prop_assert!((0.0..=top + 1e-12).contains(&s));
        }
    }

    #[test]
    fn image_at_the_mean_leaves_score_unchanged(seed: u64) {
        let mut case = score_case(seed, true);
        let probe = extract_terms_from_texts(&case.texts, &Lexicon::default());
        let term = probe.terms().iter().next().unwrap().clone();
        let before = word_score(&term, &case.hits, &probe);
        case.texts.push(term.clone());
        let id = case.texts.len() - 1;
        case.hits.push(CaptionHits::new(vec![Hit { caption_id: id, confidence: before }]));
        let bag = extract_terms_from_texts(&case.texts, &Lexicon::default());
        let after = word_score(&term, &case.hits, &bag);
        prop_assert!((after - before).abs() <= 1e-12);
    }

    #[test]
    fn ranking_is_sorted_and_thresholded(seed: u64, threshold in -0.5f64..0.8) {
        let case = score_case(seed, false);
        let bag = extract_terms_from_texts(&case.texts, &Lexicon::default());
        let ranked = rank_concepts(&bag, &case.hits, threshold);
        prop_assert!(ranked.iter().all(|c| c.score >= threshold));
        for w in ranked.windows(2) {
            prop_assert!(concept_order(&w[0], &w[1]).is_lt());
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].term < w[1].term));
        }
    }

    #[test]
    fn contrastive_filter_is_set_difference(
        high in prop::collection::btree_set(0usize..12, 0..12),
        low in prop::collection::btree_set(0usize..12, 0..12),
    ) {
        let ranked = |s: &BTreeSet<usize>| -> Vec<RankedConcept> {
            s.iter().map(|&i| RankedConcept { term: word(i), score: 1.0 - i as f64 / 20.0 }).collect()
        };
        let out = subtract_ranked(&ranked(&high), &ranked(&low));
        let kept: BTreeSet<String> = out.kept.iter().map(|c| c.term.clone()).collect();
        let want_kept: BTreeSet<String> = high.difference(&low).map(|&i| word(i)).collect();
        let want_gone: BTreeSet<String> = high.intersection(&low).map(|&i| word(i)).collect();
        prop_assert_eq!(kept.clone(), want_kept);
        prop_assert_eq!(out.discarded.clone(), want_gone);
        prop_assert!(kept.is_disjoint(&out.discarded));
    }

    #[test]
    fn retrieval_ignores_block_size(seed: u64, m in 1usize..300, k in 1usize..8, block in 1usize..64) {
        let mut r = rng(seed);
        let a = unit_embeddings(&mut r, m, 8);
        let b = unit_embeddings(&mut r, 5, 8);
        let index = CaptionIndex::new(a, CaptionCorpus::new(vec![String::new(); m])).unwrap();
        let k = k.min(m);
        let reference = top_k_captions(&b, &index, k, m).unwrap();
        let blocked = top_k_captions(&b, &index, k, block).unwrap();
        prop_assert_eq!(&reference, &blocked);
        for image in &blocked {
            prop_assert_eq!(image.len(), k);
            let ids: BTreeSet<usize> = image.iter().map(|h| h.caption_id).collect();
            prop_assert_eq!(ids.len(), k);
            for w in image.hits.windows(2) {
                prop_assert!(w[0].rank_cmp(&w[1]).is_lt());
            }
        }
    }

    #[test]
    fn low_set_ignores_high_set_order(seed: u64, beta in -0.2f64..0.95) {
        let mut r = rng(seed);
        let h = RepresentationMatrix::normalized(positive_matrix(&mut r, 50, 8)).unwrap();
        let size = r.random_range(1..=3);
        let group = GroupKey::new(distinct(&mut r, 8, size));
        let k = r.random_range(1..=12);
        let t_set = distinct(&mut r, 50, k);
        let mut shuffled = t_set.clone();
        shuffled.shuffle(&mut r);
        let th = ActivationThresholds::new(0.5, EpsilonMode::FeatureMean, beta, 1).unwrap();
        prop_assert_eq!(
            lowly_activating(&h, &group, &t_set, &th).unwrap(),
            lowly_activating(&h, &group, &shuffled, &th).unwrap()
        );
    }

    #[test]
    fn high_set_shrinks_as_alpha_grows(seed: u64, a in -1.0f64..1.0, b in -1.0f64..1.0) {
        let h = unit_representations(&mut rng(seed), 60, 6);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for f in 0..6 {
            let wide: BTreeSet<usize> = highly_activating(&h, f, lo).into_iter().collect();
            let narrow: BTreeSet<usize> = highly_activating(&h, f, hi).into_iter().collect();
            prop_assert!(narrow.is_subset(&wide));
        }
    }

    #[test]
    fn singleton_group_equals_single_feature(seed: u64, alpha in -0.5f64..0.5) {
        let h = unit_representations(&mut rng(seed), 60, 6);
        for f in 0..6 {
            prop_assert_eq!(group_highly_activating(&h, &GroupKey::single(f), alpha), highly_activating(&h, f, alpha));
        }
    }

    #[test]
    fn group_buckets_partition_samples(seed: u64, alpha in 0.2f64..0.6) {
        let h = clustered(seed, 80, 10);
        let catalog = discover_groups(&h, alpha, 0).unwrap();
        let mut seen = vec![0usize; 80];
        for e in catalog.entries() {
            for &j in &e.samples {
                seen[j] += 1;
            }
            for &f in e.features.features() {
                let single: BTreeSet<usize> = highly_activating(&h, f, alpha).into_iter().collect();
                prop_assert!(e.samples.iter().all(|j| single.contains(j)));
            }
        }
        for (j, count) in seen.iter().enumerate() {
            let active = (0..10).any(|i| h.value(j, i) > alpha);
            prop_assert_eq!(*count, usize::from(active));
        }
    }

    #[test]
    fn catalog_ignores_sample_order(seed: u64) {
        let h = clustered(seed, 60, 8);
        let mut order: Vec<usize> = (0..60).collect();
        order.shuffle(&mut rng(seed ^ 7));
        let shuffled = RepresentationMatrix::normalized(h.matrix().select_rows(&order)).unwrap();
        let a = discover_groups(&h, 0.4, 2).unwrap();
        let b = discover_groups(&shuffled, 0.4, 2).unwrap();
        let keys_a: Vec<&GroupKey> = a.keys().collect();
        let keys_b: Vec<&GroupKey> = b.keys().collect();
        prop_assert_eq!(keys_a, keys_b);
        for (ea, eb) in a.entries().zip(b.entries()) {
            let mut mapped: Vec<usize> = eb.samples.iter().map(|&j| order[j]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(&ea.samples, &mapped);
        }
    }

    #[test]
    fn lowering_gamma_never_unflags(seed: u64, g1 in -1.0f64..1.0, g2 in -1.0f64..1.0) {
        let mut r = rng(seed);
        let h = clustered(seed, 60, 8);
        let emb = unit_embeddings(&mut r, 60, 6);
        let catalog = discover_groups(&h, 0.4, 1).unwrap();
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let strict = flag_interpretable(&catalog, &emb, hi).unwrap();
        let loose = flag_interpretable(&catalog, &emb, lo).unwrap();
        for (s, l) in strict.entries().zip(loose.entries()) {
            prop_assert!(!s.interpretable || l.interpretable);
            if let Some(v) = s.avg_sim {
                prop_assert_eq!(s.interpretable, v >= hi);
            }
        }
    }

    #[test]
    fn top_contributor_survives_scaling(seed: u64, log_c in -3.0f64..3.0) {
        let mut r = rng(seed);
        let head = ClassifierHead::unnamed(gaussian_matrix(&mut r, 4, 16)).unwrap();
        let h = unit_representations(&mut r, 1, 16);
        let c = 10f64.powf(log_c);
        let scaled: Vec<f64> = h.row(0).iter().map(|v| v * c).collect();
        for y in 0..4 {
            let a = top_contributors(&head, h.row(0), y, 1).unwrap()[0].feature;
            let b = top_contributors(&head, &scaled, y, 1).unwrap()[0].feature;
            prop_assert_eq!(a, b);
            let sum: f64 = contributions(&head, h.row(0), y).unwrap().iter().map(|c| c.contribution).sum();
            prop_assert!((sum - oracle_dot(head.class_row(y), h.row(0))).abs() <= 1e-6);
        }
    }
}
