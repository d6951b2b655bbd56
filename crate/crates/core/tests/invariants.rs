use std::collections::BTreeSet;

use ecpec_core::corpus::{generate_synthetic, split_dataset, Conversation, SplitRatios, SyntheticParams, Utterance};
use ecpec_core::evaluation::{cee_pos_f1, gold_records, majority_vote};
use ecpec_core::fusion::{
    face_features_for_utterance, fit_selection, match_face, BoundingBox, FaceObservation, MatchDatabase, SelectionMode,
};
use ecpec_core::nn::{Graph, ParameterStore};
use ecpec_core::pipeline::{apply_label_noise, StageOneLabels};
use ecpec_core::span::{decode_exhaustive, decode_topk, SpanInput, SEGMENT_CANDIDATE};
use ecpec_core::taxonomy::EmotionLabel;
use ecpec_core::tsam::{build_speaker_graph, dice_loss, DICE_EPS};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0..5.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn conversation(speakers: Vec<u8>, lengths: Vec<usize>) -> Conversation {
    Conversation {
        id: "p".into(),
        utterances: speakers
            .iter()
            .zip(&lengths)
            .enumerate()
            .map(|(i, (s, n))| {
                let speaker = if *s == 0 { String::new() } else { format!("S{s}") };
                let text = (0..*n).map(|k| format!("w{k}")).collect::<Vec<_>>().join(" ");
                Utterance::new(i + 1, speaker, text)
            })
            .collect(),
        pairs: vec![],
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_softmax_rows_are_distributions(x in matrix(4, 5), bits in prop::collection::vec(any::<bool>(), 20)) {
        let mask = Array2::from_shape_vec((4, 5), bits).unwrap();
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let v = g.constant(x);
        let p = g.masked_softmax_rows(v, &mask);
        let p = g.value(p);
        for (i, row) in p.rows().into_iter().enumerate() {
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
            let any = mask.row(i).iter().any(|m| *m);
            let sum: f64 = row.sum();
            let ok = if any { (sum - 1.0).abs() < 1e-9 } else { sum == 0.0 };
            prop_assert!(ok);
            for (j, v) in row.iter().enumerate() {
                if !mask[[i, j]] {
                    prop_assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn dice_loss_is_bounded(p in prop::collection::vec(0.0..1.0f64, 12), y in prop::collection::vec(any::<bool>(), 12)) {
        let p = Array2::from_shape_vec((4, 3), p).unwrap();
        let y = Array2::from_shape_vec((4, 3), y.into_iter().map(f64::from).collect()).unwrap();
        let l = dice_loss(&p, &y, DICE_EPS).unwrap();
        prop_assert!((0.0..=1.0).contains(&l));
        let perfect = dice_loss(&y, &y, DICE_EPS).unwrap();
        prop_assert!(perfect.abs() < 1e-12);
    }

    #[test]
    fn pos_f1_is_bounded_and_perfect_on_gold(seed in 0u64..1000, drop in 0usize..5) {
        let convs = generate_synthetic(seed, 3, &SyntheticParams::default()).unwrap();
        let gold = gold_records(&convs);
        let perfect = cee_pos_f1(&gold, &gold, true);
        prop_assert!(gold.is_empty() || (perfect.pos_f1 - 1.0).abs() < 1e-12);
        let partial: Vec<_> = gold.iter().skip(drop).cloned().collect();
        let s = cee_pos_f1(&partial, &gold, true);
        prop_assert!((0.0..=1.0).contains(&s.pos_f1));
        prop_assert!(s.precision == 1.0 || partial.is_empty());
        prop_assert!(s.pos_f1 <= perfect.pos_f1 + 1e-12);
    }

    #[test]
    fn majority_vote_lies_between_intersection_and_union(sets in prop::collection::vec(prop::collection::btree_set(0u8..12, 0..8), 1..6)) {
        let union: BTreeSet<u8> = sets.iter().flatten().copied().collect();
        let mut inter = sets[0].clone();
        for s in &sets[1..] {
            inter = inter.intersection(s).copied().collect();
        }
        let vote = majority_vote(&sets, None).unwrap();
        prop_assert!(inter.is_subset(&vote));
        prop_assert!(vote.is_subset(&union));
        prop_assert_eq!(majority_vote(&sets, Some(1)).unwrap(), union);
        prop_assert_eq!(majority_vote(&sets, Some(sets.len())).unwrap(), inter);
    }

    #[test]
    fn variance_selection_is_distinct_and_equivariant(x in matrix(12, 8), k in 1usize..8, shift in 1usize..8) {
        let y: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let sel = fit_selection(&x, &y, k, SelectionMode::Variance).unwrap();
        let distinct: BTreeSet<usize> = sel.indices.iter().copied().collect();
        prop_assert_eq!(distinct.len(), k);
        prop_assert!(sel.indices.iter().all(|&i| i < 8));
        // Rotating columns rotates the selection.
        let perm: Vec<usize> = (0..8).map(|j| (j + shift) % 8).collect();
        let rotated = Array2::from_shape_fn((12, 8), |(i, j)| x[[i, perm[j]]]);
        let sel2 = fit_selection(&rotated, &y, k, SelectionMode::Variance).unwrap();
        let mapped: BTreeSet<usize> = sel2.indices.iter().map(|&j| perm[j]).collect();
        let var = |j: usize| {
            let c = x.column(j);
            let m = c.mean().unwrap();
            c.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        };
        let kth: Vec<f64> = {
            let mut v: Vec<f64> = (0..8).map(var).collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        // Equivariance holds whenever the cut is not a tie.
        if k == 8 || (kth[k - 1] - kth[k]).abs() > 1e-9 {
            prop_assert_eq!(mapped, distinct);
        }
    }

    #[test]
    fn face_match_is_scale_invariant(q in prop::collection::vec(-1.0..1.0f64, 4), c in 0.01..100.0f64,
                                     a in prop::collection::vec(-1.0..1.0f64, 4), b in prop::collection::vec(-1.0..1.0f64, 4)) {
        prop_assume!(q.iter().any(|v| v.abs() > 1e-3));
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let mut db = MatchDatabase::new(0.0);
        db.insert("Ross", &a).unwrap();
        db.insert("Monica", &b).unwrap();
        let bbox = BoundingBox { x: 0.0, y: 0.0, w: 1.0, h: 1.0 };
        let obs = FaceObservation::new(bbox.clone(), q.clone(), vec![0.0; 3]).unwrap();
        let scaled = FaceObservation::new(bbox, q.iter().map(|v| v * c).collect(), vec![0.0; 3]).unwrap();
        let sims = [unit(&a), unit(&b)].map(|e| unit(&q).iter().zip(&e).map(|(x, y)| x * y).sum::<f64>());
        prop_assume!((sims[0] - sims[1]).abs() > 1e-9);
        prop_assert_eq!(match_face(&obs, &db).unwrap(), match_face(&scaled, &db).unwrap());
    }

    #[test]
    fn face_features_are_total(n in 0usize..4, dim in 1usize..6, speaker in "[A-Z][a-z]{0,4}",
                               embs in prop::collection::vec((0.1..2.0f64, 0.1..2.0f64, prop::collection::vec(-1.0..1.0f64, 3), prop::collection::vec(-1.0..1.0f64, 4)), 4)) {
        let mut db = MatchDatabase::new(0.5);
        db.insert("Ross", &[1.0, 0.0, 0.0]).unwrap();
        let obs: Vec<FaceObservation> = embs
            .into_iter()
            .take(n)
            .map(|(w, h, id, emo)| FaceObservation::new(BoundingBox { x: 0.0, y: 0.0, w, h }, id, emo).unwrap())
            .collect();
        let f = face_features_for_utterance(&obs, &speaker, &db, dim);
        prop_assert_eq!(f.dim(), dim);
        prop_assert!(f.values().iter().all(|v| v.is_finite()));
        if obs.is_empty() {
            prop_assert!(f.values().iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn topk_with_full_k_is_exhaustive(starts in prop::collection::vec(-3.0..3.0f64, 1..10), ends in prop::collection::vec(-3.0..3.0f64, 100)) {
        let n = starts.len();
        let end_fn = |s: usize| (0..n).map(|e| if e < s { f64::NEG_INFINITY } else { ends[s * 10 + e] }).collect::<Vec<_>>();
        prop_assert_eq!(decode_topk(&starts, end_fn, n), decode_exhaustive(&starts, end_fn));
        let (s, e, _) = decode_topk(&starts, end_fn, 2).unwrap();
        prop_assert!(s <= e && e < n);
    }

    #[test]
    fn speaker_graph_partitions_known_pairs(speakers in prop::collection::vec(0u8..4, 1..10)) {
        let n = speakers.len();
        let conv = conversation(speakers.clone(), vec![1; n]);
        let g = build_speaker_graph(&conv, n);
        for ((i, j), intra) in g.intra.indexed_iter() {
            let inter = g.inter[[i, j]];
            prop_assert!(!(*intra && inter));
            prop_assert_eq!(*intra || inter, g.known[i] && g.known[j]);
            prop_assert_eq!(*intra, g.intra[[j, i]]);
        }
    }

    #[test]
    fn span_input_respects_budget(lengths in prop::collection::vec(1usize..20, 2..8), max_tokens in 24usize..64, pick in any::<prop::sample::Index>()) {
        let n = lengths.len();
        let conv = conversation(vec![1; n], lengths.clone());
        let e = n;
        let c = pick.index(n) + 1;
        let input = SpanInput::build(&conv, e, c, max_tokens).unwrap();
        prop_assert!(input.tokens.len() <= max_tokens);
        prop_assert_eq!(input.tokens.len(), input.segments.len());
        prop_assert_eq!(input.candidate.len(), lengths[c - 1]);
        for i in input.candidate.clone() {
            prop_assert_eq!(input.segments[i], SEGMENT_CANDIDATE);
        }
    }

    #[test]
    fn split_is_a_deterministic_partition(n in 3usize..40, seed in any::<u64>()) {
        let convs: Vec<Conversation> = (0..n).map(|i| Conversation { id: format!("c{i}"), ..conversation(vec![1], vec![1]) }).collect();
        let ratios = SplitRatios::new(0.6, 0.2, 0.2).unwrap();
        let (a, b, c) = split_dataset(&convs, ratios, seed).unwrap();
        let ids: Vec<String> = a.iter().chain(&b).chain(&c).map(|c| c.id.clone()).collect();
        let set: BTreeSet<&String> = ids.iter().collect();
        prop_assert_eq!(ids.len(), n);
        prop_assert_eq!(set.len(), n);
        let again = split_dataset(&convs, ratios, seed).unwrap();
        prop_assert_eq!(again.0.iter().map(|c| &c.id).collect::<Vec<_>>(), a.iter().map(|c| &c.id).collect::<Vec<_>>());
    }

    #[test]
    fn label_noise_extremes(labels in prop::collection::vec(0usize..7, 1..30), seed in any::<u64>()) {
        let labels: StageOneLabels = [("c".to_string(), labels.iter().map(|&i| EmotionLabel::ALL[i]).collect())].into();
        prop_assert_eq!(&apply_label_noise(&labels, 0.0, seed), &labels);
        let flipped = apply_label_noise(&labels, 1.0, seed);
        prop_assert!(flipped["c"].iter().zip(&labels["c"]).all(|(a, b)| a != b));
    }
}
