use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spar::dataio::{parse_behaviors_str, parse_catalog_str, sample_negatives, Behavior, Impression};
use spar::encoder::{Encoder, EncoderConfig};
use spar::metrics::{auc, mrr, ndcg_at_k};
use spar::numerics::{softmax_rows, Graph, Mask, ParamStore, Tensor};
use spar::polyattn::{build_sparse_mask, poly_attend, uhs, Codebook};
use spar::predictor::nce_loss;
use spar::textprep::{build_history_sequence, ContentItem, Schema, EOS, SOS};
use std::path::Path;

fn codebook(q: usize, d: usize, seed: u64) -> (ParamStore, Codebook) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let book = Codebook::new(&mut store, "book", q, d, (d / 2).max(1), 1.0, &mut rng).unwrap();
    (store, book)
}

fn states(len: usize, d: usize, seed: u64) -> Tensor {
    Tensor::random_normal(vec![len, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xfeed))
}

fn sos_strategy() -> impl Strategy<Value = (usize, Vec<usize>)> {
    (2usize..80).prop_flat_map(|len| (Just(len), proptest::collection::btree_set(0..len, 0..6)))
        .prop_map(|(len, s)| (len, s.into_iter().collect()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions_with_exact_zeros(
        rows in 1usize..6, cols in 1usize..12, seed in any::<u64>(), density in 0.1f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::random_normal(vec![rows, cols], 3.0, &mut rng);
        let mut mask = Mask::all(rows, cols, false);
        for r in 0..rows {
            mask.set(r, (seed as usize + r) % cols, true);
            for c in 0..cols {
                if rand::Rng::gen_bool(&mut rng, density) {
                    mask.set(r, c, true);
                }
            }
        }
        let p = softmax_rows(&x, Some(&mask)).unwrap();
        for r in 0..rows {
            let row = p.row(r);
            prop_assert!(((row.iter().map(|&v| v as f64).sum::<f64>()) - 1.0).abs() < 1e-6);
            for c in 0..cols {
                prop_assert!(row[c] >= 0.0);
                if !mask.get(r, c) {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn sparse_mask_is_sound(
        (len, sos) in sos_strategy(), k in 1usize..10, window in 1usize..40,
        ratio in 0.0f64..1.0, seed in any::<u64>(),
    ) {
        let d = 8;
        let mask = build_sparse_mask(len, &sos, k, window, ratio, seed).unwrap();
        let (store, book) = codebook(k, d, seed);
        let mut g = Graph::inference(&store);
        let h = g.input_tensor(&states(len, d, seed)).unwrap();
        let w = uhs(&mut g, h, &book, Some(&mask)).unwrap().weights;
        let w = g.tensor(w);
        for a in 0..k {
            prop_assert!(mask.allowed.count_row(a) >= 1);
            let row = w.row(a);
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            for j in 0..len {
                if !mask.allowed.get(a, j) {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
            for &p in &sos {
                prop_assert!(mask.allowed.get(a, p));
            }
        }
        // same geometry and seed, same mask
        prop_assert_eq!(&mask, &build_sparse_mask(len, &sos, k, window, ratio, seed).unwrap());
    }

    #[test]
    fn saturated_sparse_mask_matches_full_attention(
        (len, sos) in sos_strategy(), k in 1usize..8, extra in 0usize..10,
        use_ratio in any::<bool>(), seed in any::<u64>(),
    ) {
        let d = 8;
        let (window, ratio) = if use_ratio { (1, 1.0) } else { (len + extra, 0.3) };
        let mask = build_sparse_mask(len, &sos, k, window, ratio, seed).unwrap();
        let (store, book) = codebook(k, d, seed);
        let mut g = Graph::inference(&store);
        let h = g.input_tensor(&states(len, d, seed)).unwrap();
        let sparse = uhs(&mut g, h, &book, Some(&mask)).unwrap().output;
        let full = uhs(&mut g, h, &book, None).unwrap().output;
        for (a, b) in g.value(sparse).iter().zip(g.value(full)) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn poly_outputs_lie_in_the_convex_hull(len in 1usize..30, q in 1usize..6, seed in any::<u64>()) {
        let d = 6;
        let x = states(len, d, seed);
        let (store, book) = codebook(q, d, seed);
        let mut g = Graph::inference(&store);
        let h = g.input_tensor(&x).unwrap();
        let out = poly_attend(&mut g, h, &book, None).unwrap().output;
        let out = g.tensor(out);
        for c in 0..d {
            let column: Vec<f32> = (0..len).map(|r| x.row(r)[c]).collect();
            let lo = column.iter().copied().fold(f32::INFINITY, f32::min);
            let hi = column.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            for a in 0..q {
                let v = out.row(a)[c];
                prop_assert!(v >= lo - 1e-5 && v <= hi + 1e-5);
            }
        }
    }

    #[test]
    fn sessions_do_not_see_each_other(
        a in proptest::collection::vec(4u32..50, 1..20),
        b in proptest::collection::vec(4u32..50, 1..20),
        c in proptest::collection::vec(4u32..50, 1..20),
        pad in 1usize..6,
    ) {
        let config = EncoderConfig { layers: 2, heads: 2, model_dim: 16, ffn_dim: 32, max_session_tokens: 64, vocab_size: 50, dropout: 0.0 };
        let mut store = ParamStore::new();
        let encoder = Encoder::new(config, &mut store, 0.1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let mut g = Graph::inference(&store);
        let alone = encoder.encode_session(&mut g, &a, None, None).unwrap();
        let with_b = encoder.encode_session(&mut g, &b, None, None).unwrap();
        let _ = (with_b, encoder.encode_session(&mut g, &c, None, None).unwrap());
        let again = encoder.encode_session(&mut g, &a, None, None).unwrap();
        prop_assert_eq!(g.value(alone), g.value(again));

        let mut padded = a.clone();
        padded.extend(std::iter::repeat_n(0, pad));
        let mut keep = vec![true; a.len()];
        keep.extend(std::iter::repeat_n(false, pad));
        let p = encoder.encode_session(&mut g, &padded, Some(&keep), None).unwrap();
        let width = g.dims(p).1;
        for (x, y) in g.value(alone).iter().zip(&g.value(p)[..a.len() * width]) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn history_sequence_marks_every_item(
        items in proptest::collection::vec(proptest::collection::vec(4u32..99, 0..9), 1..8),
        summary in proptest::option::of(proptest::collection::vec(4u32..99, 0..9)),
    ) {
        let seq = build_history_sequence(&items, summary.as_deref()).unwrap();
        let expected = items.len() + usize::from(summary.is_some());
        prop_assert_eq!(seq.item_boundaries.len(), expected);
        prop_assert_eq!(seq.ids.iter().filter(|&&t| t == SOS).count(), expected);
        prop_assert_eq!(seq.ids.iter().filter(|&&t| t == EOS).count(), expected);
        prop_assert_eq!(seq, build_history_sequence(&items, summary.as_deref()).unwrap());
    }

    #[test]
    fn nce_is_nonnegative_and_monotone(
        pos in -10.0f64..10.0, negs in proptest::collection::vec(-10.0f64..10.0, 1..8), bump in 0.01f64..2.0,
    ) {
        // margins stay below 20 so a loss change is far above f64 resolution
        let base = nce_loss(pos, &negs).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!(nce_loss(pos + bump, &negs).unwrap() < base);
        let mut raised = negs.clone();
        raised[0] += bump;
        prop_assert!(nce_loss(pos, &raised).unwrap() > base);
    }
}

fn impression_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..20).prop_flat_map(|n| {
        (
            proptest::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -5.0f64..5.0], n),
            proptest::collection::vec(0u8..2, n),
        )
    })
}

proptest! {
    #[test]
    fn metrics_ignore_strictly_increasing_transforms((scores, labels) in impression_strategy()) {
        let warped: Vec<f64> = scores.iter().map(|&s| s * s * s + 2.0 * s + 7.0).collect();
        if labels.contains(&1) && labels.contains(&0) {
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&warped, &labels).unwrap());
        }
        if labels.contains(&1) {
            prop_assert_eq!(mrr(&scores, &labels).unwrap(), mrr(&warped, &labels).unwrap());
            for k in [5, 10] {
                prop_assert_eq!(ndcg_at_k(&scores, &labels, k).unwrap(), ndcg_at_k(&warped, &labels, k).unwrap());
            }
        }
    }

    #[test]
    fn behaviors_round_trip(
        rows in proptest::collection::vec(
            (
                proptest::collection::vec("N[0-9]{1,4}", 0..6),
                "U[0-9]{1,3}",
                proptest::collection::vec(("N[0-9]{1,4}", 0u8..2), 1..6),
            ),
            1..6,
        )
    ) {
        let records: Vec<Behavior> = rows
            .into_iter()
            .enumerate()
            .map(|(i, (history, user, candidates))| Behavior {
                history,
                impression: Impression {
                    impression_id: (i + 1).to_string(),
                    user_id: user,
                    timestamp: "11/11/2019 9:05:58 AM".into(),
                    candidates,
                },
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("behaviors.tsv");
        spar::dataio::write_behaviors(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        prop_assert_eq!(parse_behaviors_str(&text, &path).unwrap(), records);
    }

    #[test]
    fn catalog_round_trip(
        items in proptest::collection::btree_map("N[0-9]{1,4}", ("[a-z ]{1,20}", "[a-z .,]{0,40}", "[a-z]{1,8}"), 1..8)
    ) {
        let items: Vec<ContentItem> = items
            .into_iter()
            .map(|(id, (t, a, c))| ContentItem::new(id, t, a, c))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.tsv");
        spar::dataio::write_catalog(&path, &items).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let catalog = parse_catalog_str(&text, Schema::News, Path::new("catalog.tsv")).unwrap();
        let back: Vec<ContentItem> = catalog.items.values().cloned().collect();
        prop_assert_eq!(back, items);
    }

    #[test]
    fn negative_sampling_depends_only_on_seed_and_ids(
        labels in proptest::collection::vec(0u8..2, 2..12), r in 1usize..6, seed in any::<u64>(),
    ) {
        let candidates: Vec<(String, u8)> = labels.iter().enumerate().map(|(i, &l)| (format!("N{i}"), l)).collect();
        let full = Impression { impression_id: "9".into(), user_id: "U1".into(), timestamp: "t".into(), candidates: candidates.clone() };
        let examples = sample_negatives(&full, r, seed);
        prop_assert_eq!(&examples, &sample_negatives(&full.clone(), r, seed));
        // each positive's negatives ignore the other positives
        for ex in &examples {
            let alone = Impression {
                candidates: candidates.iter().filter(|(id, l)| *l == 0 || *id == ex.positive).cloned().collect(),
                ..full.clone()
            };
            prop_assert_eq!(&sample_negatives(&alone, r, seed)[0], ex);
        }
    }
}
