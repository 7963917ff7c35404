//! Worked examples checked against independent brute-force oracles.

mod common;

use std::collections::BTreeSet;

use concept_engine::activation::{
    default_alpha, group_highly_activating, highly_activating, lowly_activating,
    top_group_of_sample, ActivationThresholds, EpsilonMode, GroupKey,
};
use concept_engine::cli::cmd_transfer;
use concept_engine::concepts::{rank_concepts, word_score};
use concept_engine::config::EngineConfig;
use concept_engine::data::{CaptionCorpus, CaptionIndex, ClassifierHead, Lexicon, PosTag};
use concept_engine::explain::predict;
use concept_engine::femb;
use concept_engine::fixtures::{generate_planted, FixtureSizes, CONFIG_FILE};
use concept_engine::groups::{discover_groups, flag_interpretable};
use concept_engine::matrix::l2_normalize_rows;
use concept_engine::retrieval::{confidence_block, top_k_captions, CaptionHits, Hit};
use concept_engine::text::extract_terms_from_texts;
use concept_engine::transfer::{fit_transfer, TransferHyper, TransferMode};
use concept_engine::{EmbeddingMatrix, Matrix, RepresentationMatrix};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn random_rows_normalize_to_unit_length() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = gaussian_matrix(&mut rng, 8, 4);
    let n = l2_normalize_rows(&m).unwrap();
    for row in n.iter_rows() {
        let norm = oracle_dot(row, row).sqrt();
        assert!((norm - 1.0).abs() <= 1e-6, "{norm}");
    }
}

#[test]
fn femb_round_trip_is_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = gaussian_matrix(&mut rng, 1000, 64).cast::<f32>();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.femb");
    femb::write_matrix(&path, &m).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), femb::HEADER_LEN + 1000 * 64 * 4);
    let back = femb::read_matrix(&path).unwrap();
    assert_eq!((back.rows(), back.cols()), (1000, 64));
    let a: Vec<u32> = m.as_slice().iter().map(|v| v.to_bits()).collect();
    let b: Vec<u32> = back.as_slice().iter().map(|v| v.to_bits()).collect();
    assert_eq!(a, b);
}

#[test]
fn default_alpha_matches_two_pass() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = unit_representations(&mut rng, 1000, 64);
    let (mean, std) = two_pass_mean_std(h.matrix().as_slice().iter().copied());
    let want = mean + 16.0 * std;
    assert!((default_alpha(&h) - want).abs() <= 1e-9);
}

#[test]
fn swap_matrix_alpha_by_hand() {
    let h = RepresentationMatrix::from_raw(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap())
        .unwrap();
    assert!((default_alpha(&h) - 8.5).abs() < 1e-12);
}

#[test]
fn highly_activating_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = unit_representations(&mut rng, 200, 16);
    for _ in 0..1000 {
        let f = rng.random_range(0..16);
        let alpha = uniform(&mut rng, -0.6, 0.6);
        let want: Vec<usize> = (0..200).filter(|&j| h.value(j, f) > alpha).collect();
        assert_eq!(highly_activating(&h, f, alpha), want);
    }
}

#[test]
fn top_group_matches_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = unit_representations(&mut rng, 200, 16);
    for _ in 0..1000 {
        let j = rng.random_range(0..200);
        let alpha = uniform(&mut rng, -0.6, 0.6);
        let want: Vec<usize> = (0..16).filter(|&i| h.value(j, i) > alpha).collect();
        assert_eq!(
            top_group_of_sample(&h, j, alpha).features(),
            want.as_slice()
        );
    }
}

/// Literal evaluation of the counterfactual rule.
fn counterfactual_oracle(
    h: &RepresentationMatrix<f64>,
    group: &[usize],
    t_set: &[usize],
    beta: f64,
) -> Vec<usize> {
    let (n, r) = (h.n_samples(), h.n_features());
    let eps: Vec<f64> = (0..r)
        .map(|i| (0..n).map(|j| h.value(j, i)).sum::<f64>() / n as f64)
        .collect();
    let rest: Vec<usize> = (0..r).filter(|i| !group.contains(i)).collect();
    let mu: Vec<f64> = rest
        .iter()
        .map(|&i| t_set.iter().map(|&j| h.value(j, i)).sum::<f64>() / t_set.len() as f64)
        .collect();
    (0..n)
        .filter(|&j| {
            group.iter().all(|&i| h.value(j, i) < eps[i])
                && rest
                    .iter()
                    .zip(&mu)
                    .map(|(&i, m)| h.value(j, i) * m)
                    .sum::<f64>()
                    >= beta
        })
        .collect()
}

#[test]
fn planted_counterfactuals_sixteen_by_four() {
    // rows 0-3 fire feature 0 on a shared context; rows 4-7 copy that context
    // with feature 0 switched off; the rest live on other directions
    let mut rows = Vec::new();
    let context = [
        [0.3, 0.5, 0.2],
        [0.2, 0.6, 0.1],
        [0.35, 0.45, 0.25],
        [0.25, 0.55, 0.2],
    ];
    let unit = |c: &[f64; 3]| {
        let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
        [c[0] / n, c[1] / n, c[2] / n]
    };
    for c in context.iter().map(unit) {
        rows.push([0.6, 0.8 * c[0], 0.8 * c[1], 0.8 * c[2]]);
    }
    for c in context.iter().map(unit) {
        rows.push([0.0, c[0], c[1], c[2]]);
    }
    for k in 0..8 {
        let w = k as f64 / 8.0;
        rows.push([0.05, 0.9 - 0.1 * w, 0.0, 0.1 + w]);
    }
    // off-context rows swap the emphasis so their similarity stays below beta
    for row in rows.iter_mut().skip(8) {
        row.swap(1, 3);
    }
    let h = RepresentationMatrix::normalized(Matrix::from_rows(&rows).unwrap()).unwrap();
    let group = GroupKey::single(0);
    let t_set = highly_activating(&h, 0, 0.5);
    assert_eq!(t_set, vec![0, 1, 2, 3]);
    let th = ActivationThresholds::new(0.5, EpsilonMode::FeatureMean, 0.7, 1).unwrap();
    let got = lowly_activating(&h, &group, &t_set, &th).unwrap();
    assert_eq!(got, vec![4, 5, 6, 7]);
    assert_eq!(got, counterfactual_oracle(&h, &[0], &t_set, 0.7));
}

#[test]
fn counterfactuals_match_literal_rule_on_random_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..200 {
        let h = RepresentationMatrix::normalized(positive_matrix(&mut rng, 40, 8)).unwrap();
        let size = rng.random_range(1..=3);
        let group = distinct(&mut rng, 8, size);
        let k = rng.random_range(1..=10);
        let t_set = distinct(&mut rng, 40, k);
        let beta = uniform(&mut rng, 0.0, 0.9);
        let th = ActivationThresholds::new(0.5, EpsilonMode::FeatureMean, beta, 1).unwrap();
        let got = lowly_activating(&h, &GroupKey::new(group.clone()), &t_set, &th).unwrap();
        assert_eq!(got, counterfactual_oracle(&h, &group, &t_set, beta));
    }
}

#[test]
fn confidence_block_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = unit_embeddings(&mut rng, 3, 8);
    let a = unit_embeddings(&mut rng, 4, 8);
    let c = confidence_block(&b, &a).unwrap();
    for q in 0..3 {
        for p in 0..4 {
            let mut want = 0.0;
            for d in 0..8 {
                want += b.row(q)[d] * a.row(p)[d];
            }
            assert!((c.get(q, p) - want).abs() <= 1e-6);
        }
    }
}

#[test]
fn top_k_max_equals_row_max() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = unit_embeddings(&mut rng, 3000, 16);
    let b = unit_embeddings(&mut rng, 20, 16);
    let index = CaptionIndex::new(a, CaptionCorpus::new(vec![String::new(); 3000])).unwrap();
    let hits = top_k_captions(&b, &index, 5, 256).unwrap();
    for (q, h) in hits.iter().enumerate() {
        let row_max = (0..3000)
            .map(|p| oracle_dot(b.row(q), index.embeddings().row(p)))
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(h.hits[0].confidence, row_max);
    }
}

#[test]
fn hand_evaluated_word_scores() {
    let lex = Lexicon::new(["a", "of"], ["photo"], Vec::<(String, PosTag)>::new()).unwrap();
    let texts = ["a shaggy dog", "white coat", "shaggy coat", "a dog photo"];
    let bag = extract_terms_from_texts(&texts, &lex);
    let hits = vec![
        CaptionHits::new(vec![
            Hit {
                caption_id: 0,
                confidence: 0.30,
            },
            Hit {
                caption_id: 1,
                confidence: 0.20,
            },
        ]),
        CaptionHits::new(vec![
            Hit {
                caption_id: 2,
                confidence: 0.40,
            },
            Hit {
                caption_id: 3,
                confidence: 0.10,
            },
        ]),
    ];
    let close = |t: &str, v: f64| assert!((word_score(t, &hits, &bag) - v).abs() < 1e-12, "{t}");
    close("shaggy", 0.35);
    close("dog", 0.20);
    close("white", 0.10);
    let ranked = rank_concepts(&bag, &hits, 0.08);
    assert_eq!(ranked[0].term, "shaggy");
    assert!(ranked.iter().all(|c| c.score >= 0.08));
}

#[test]
fn zero_threshold_ranks_every_positive_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lex = Lexicon::default();
    for _ in 0..100 {
        let texts: Vec<String> = (0..10)
            .map(|_| {
                (0..4)
                    .map(|_| word(rng.random_range(0..8)))
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let hits: Vec<CaptionHits<f64>> = (0..4)
            .map(|_| {
                CaptionHits::new(
                    distinct(&mut rng, 10, 3)
                        .into_iter()
                        .map(|caption_id| Hit {
                            caption_id,
                            confidence: uniform(&mut rng, -0.2, 1.0),
                        })
                        .collect(),
                )
            })
            .collect();
        let bag = extract_terms_from_texts(&texts, &lex);
        let oracle = bag
            .terms()
            .iter()
            .filter(|t| {
                let s: f64 = hits
                    .iter()
                    .map(|img| {
                        img.hits
                            .iter()
                            .map(|h| {
                                let toks: Vec<&str> = texts[h.caption_id].split(' ').collect();
                                let parts: Vec<&str> = t.split(' ').collect();
                                if toks.windows(parts.len()).any(|w| w == parts.as_slice()) {
                                    h.confidence
                                } else {
                                    0.0
                                }
                            })
                            .fold(f64::NEG_INFINITY, f64::max)
                    })
                    .sum::<f64>()
                    / hits.len() as f64;
                s >= 0.0
            })
            .count();
        assert_eq!(rank_concepts(&bag, &hits, 0.0).len(), oracle);
    }
}

#[test]
fn catalog_matches_exhaustive_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (n, r) = (64, 16);
    let protos: Vec<Vec<usize>> = (0..5).map(|_| distinct(&mut rng, r, 2)).collect();
    let mut data = Vec::new();
    for _ in 0..n {
        let p = &protos[rng.random_range(0..protos.len())];
        for i in 0..r {
            data.push(if p.contains(&i) {
                0.7
            } else {
                uniform(&mut rng, 0.0, 0.15)
            });
        }
    }
    let h = RepresentationMatrix::normalized(Matrix::new(n, r, data).unwrap()).unwrap();
    let catalog = discover_groups(&h, 0.4, 3).unwrap();
    let mut oracle = Vec::new();
    for mask in 1u32..(1 << r) {
        let key: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        let samples: Vec<usize> = (0..n)
            .filter(|&j| (0..r).all(|i| (h.value(j, i) > 0.4) == key.contains(&i)))
            .collect();
        if samples.len() > 3 {
            oracle.push((GroupKey::new(key), samples));
        }
    }
    let got: Vec<(GroupKey, Vec<usize>)> = catalog
        .entries()
        .map(|e| (e.features.clone(), e.samples.clone()))
        .collect();
    assert!(!got.is_empty());
    assert_eq!(got, oracle);
}

#[test]
fn orthogonal_clusters_similarity() {
    // twelve samples in one group, half on each of two orthogonal directions
    let rows: Vec<[f64; 3]> = (0..12)
        .map(|j| [1.0, 1.0, if j < 6 { 0.0 } else { 0.01 }])
        .collect();
    let h = RepresentationMatrix::normalized(Matrix::from_rows(&rows).unwrap()).unwrap();
    let catalog = discover_groups(&h, 0.5, 10).unwrap();
    assert_eq!(catalog.len(), 1);
    let emb_rows: Vec<[f64; 2]> = (0..12)
        .map(|j| if j < 6 { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect();
    let emb = EmbeddingMatrix::normalized(Matrix::from_rows(&emb_rows).unwrap()).unwrap();
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..12 {
        for b in a + 1..12 {
            total += oracle_dot(emb.row(a), emb.row(b));
            pairs += 1;
        }
    }
    let want = total / pairs as f64;
    assert!((want - 30.0 / 66.0).abs() < 1e-12);
    for (gamma, flag) in [(0.4, true), (0.5, false)] {
        let flagged = flag_interpretable(&catalog, &emb, gamma).unwrap();
        let e = flagged.entries().next().unwrap();
        assert!((e.avg_sim.unwrap() - want).abs() <= 1e-9);
        assert_eq!(e.interpretable, flag);
    }
}

#[test]
fn predict_matches_matvec() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let head = ClassifierHead::unnamed(gaussian_matrix(&mut rng, 10, 64)).unwrap();
    let h = unit_representations(&mut rng, 100, 64);
    for j in 0..100 {
        let logits: Vec<f64> = (0..10)
            .map(|c| oracle_dot(head.class_row(c), h.row(j)))
            .collect();
        let mut best = 0;
        for c in 1..10 {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        assert_eq!(predict(&head, h.row(j)).unwrap(), best);
    }
}

#[test]
fn closed_form_matches_dense_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let ht = unit_representations(&mut rng, 300, 12);
    let hs = unit_representations(&mut rng, 300, 9);
    let lambda = 1e-3;
    let hyper = TransferHyper {
        lambda,
        ..TransferHyper::default()
    };
    let map = fit_transfer(&ht, &hs, TransferMode::ClosedForm, &hyper).unwrap();
    let t = DMatrix::from_row_slice(300, 12, ht.matrix().as_slice());
    let s = DMatrix::from_row_slice(300, 9, hs.matrix().as_slice());
    let gram = t.transpose() * &t + DMatrix::identity(12, 12) * lambda;
    let want = gram.lu().solve(&(t.transpose() * s)).unwrap();
    for a in 0..12 {
        for b in 0..9 {
            assert!((map.z.get(a, b) - want[(a, b)]).abs() <= 1e-9);
        }
    }
}

#[test]
fn closed_form_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let ht = unit_representations(&mut rng, 400, 10);
    let hs = unit_representations(&mut rng, 400, 10);
    let mut perm: Vec<usize> = (0..10).collect();
    perm.shuffle(&mut rng);
    let hyper = TransferHyper::default();
    let z = fit_transfer(&ht, &hs, TransferMode::ClosedForm, &hyper)
        .unwrap()
        .z;
    let zp = fit_transfer(
        &ht.permute_features(&perm).unwrap(),
        &hs,
        TransferMode::ClosedForm,
        &hyper,
    )
    .unwrap()
    .z;
    for (c, &p) in perm.iter().enumerate() {
        for b in 0..10 {
            assert!((zp.get(c, b) - z.get(p, b)).abs() <= 1e-9);
        }
    }
}

#[test]
fn planted_concepts_land_on_permuted_features() {
    let dir = tempfile::tempdir().unwrap();
    let inst = generate_planted(0, &FixtureSizes::default()).unwrap();
    inst.write(dir.path()).unwrap();
    let cfg = EngineConfig::load(dir.path().join(CONFIG_FILE)).unwrap();
    let outcome = cmd_transfer(&cfg).unwrap();
    let perm = &inst.truth.permutation;
    assert_eq!(outcome.map.row_argmax(), *perm);
    for unit in &inst.truth.units {
        let moved = outcome
            .report
            .reports
            .iter()
            .find(|r| r.source == unit.features)
            .expect("planted unit transferred");
        let want: BTreeSet<usize> = unit
            .features
            .features()
            .iter()
            .map(|&s| perm.iter().position(|&p| p == s).unwrap())
            .collect();
        let got: BTreeSet<usize> = moved
            .target
            .as_ref()
            .unwrap()
            .features()
            .iter()
            .copied()
            .collect();
        assert_eq!(got, want);
        for t in &unit.true_concepts {
            assert!(moved.concepts.iter().any(|c| &c.term == t));
        }
    }
}

#[test]
fn fixtures_are_reproducible_per_seed() {
    let sizes = FixtureSizes::default();
    let a = generate_planted(0, &sizes).unwrap().files();
    let b = generate_planted(0, &sizes).unwrap().files();
    let c = generate_planted(1, &sizes).unwrap().files();
    assert_eq!(a, b);
    assert_ne!(a["captions.jsonl"], c["captions.jsonl"]);
    assert_ne!(a["representations.femb"], c["representations.femb"]);
}

#[test]
fn seed_zero_feature_three_ground_truth() {
    let inst = generate_planted(0, &FixtureSizes::default()).unwrap();
    let unit = inst
        .truth
        .units
        .iter()
        .find(|u| u.features == GroupKey::single(3))
        .unwrap();
    assert_eq!(unit.true_concepts.len(), 2);
    assert_eq!(unit.spurious.len(), 1);
    let h = &RepresentationMatrix::normalized(inst.representations.cast::<f64>()).unwrap();
    let alpha = default_alpha(h);
    let high = group_highly_activating(h, &unit.features, alpha);
    assert_eq!(high, unit.high_samples);
}

#[test]
fn closed_form_ignores_sample_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let ht = unit_representations(&mut rng, 500, 16);
    let hs = unit_representations(&mut rng, 500, 16);
    let mut order: Vec<usize> = (0..500).collect();
    order.shuffle(&mut rng);
    let shuffle = |h: &RepresentationMatrix<f64>| {
        RepresentationMatrix::normalized(h.matrix().select_rows(&order)).unwrap()
    };
    let hyper = TransferHyper::default();
    let a = fit_transfer(&ht, &hs, TransferMode::ClosedForm, &hyper).unwrap();
    let b = fit_transfer(
        &shuffle(&ht),
        &shuffle(&hs),
        TransferMode::ClosedForm,
        &hyper,
    )
    .unwrap();
    for (x, y) in a.z.as_slice().iter().zip(b.z.as_slice()) {
        assert!((x - y).abs() <= 1e-9);
    }
    assert!((a.fit_residual - b.fit_residual).abs() <= 1e-9);
}
