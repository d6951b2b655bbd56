use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::records::PredictionRecord;
use super::{f1, ratio};
use crate::corpus::TokenSpan;
use crate::taxonomy::EmotionLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub precision: f64,
    pub recall: f64,
    pub pos_f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

/// Positive-class F1 over emotion-cause pairs. A prediction is correct when
/// its (conversation, emotion utterance, cause utterance) key is gold and,
/// with `strict_label`, its emotion equals the gold emotion. Duplicate
/// records count once.
pub fn cee_pos_f1(pred: &[PredictionRecord], gold: &[PredictionRecord], strict_label: bool) -> PairScore {
    let key = |r: &PredictionRecord| {
        let label = strict_label.then_some(r.emotion);
        (r.conversation.clone(), r.emotion_index, r.cause_index, label)
    };
    let p: BTreeSet<_> = pred.iter().map(key).collect();
    let g: BTreeSet<_> = gold.iter().map(key).collect();
    let tp = p.intersection(&g).count();
    let precision = ratio(tp as f64, p.len() as f64);
    let recall = ratio(tp as f64, g.len() as f64);
    PairScore {
        precision,
        recall,
        pos_f1: f1(precision, recall),
        true_positives: tp,
        predicted: p.len(),
        gold: g.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub weighted_avg_proportional_f1: f64,
    pub per_emotion: BTreeMap<EmotionLabel, f64>,
}

fn span_len(s: Option<TokenSpan>) -> usize {
    s.map_or(0, |s| s.len())
}

/// Token-overlap F1 between predicted and gold cause spans.
///
/// Within each emotion class, pairs are matched on their key; precision is
/// total overlap over total predicted span length (unmatched predictions
/// included) and recall is total overlap over total gold span length. Class
/// F1 values are averaged with weights equal to the number of gold pairs of
/// that class. A missing span counts as length 0.
pub fn span_proportional_f1(pred: &[PredictionRecord], gold: &[PredictionRecord]) -> SpanScore {
    type Key = (String, usize, usize);
    let group = |records: &[PredictionRecord]| {
        let mut by_class: BTreeMap<EmotionLabel, BTreeMap<Key, Option<TokenSpan>>> = BTreeMap::new();
        for r in records {
            by_class
                .entry(r.emotion)
                .or_default()
                .entry((r.conversation.clone(), r.emotion_index, r.cause_index))
                .or_insert(r.span);
        }
        by_class
    };
    let pred = group(pred);
    let gold = group(gold);

    let mut per_emotion = BTreeMap::new();
    let mut weighted = 0.0;
    let mut support_total = 0.0;
    for (label, gold_pairs) in &gold {
        let empty = BTreeMap::new();
        let pred_pairs = pred.get(label).unwrap_or(&empty);
        let overlap: usize = gold_pairs
            .iter()
            .filter_map(|(k, g)| {
                let p = pred_pairs.get(k)?;
                Some(match (p, g) {
                    (Some(p), Some(g)) => p.overlap(g),
                    _ => 0,
                })
            })
            .sum();
        let pred_len: usize = pred_pairs.values().map(|s| span_len(*s)).sum();
        let gold_len: usize = gold_pairs.values().map(|s| span_len(*s)).sum();
        let score = f1(ratio(overlap as f64, pred_len as f64), ratio(overlap as f64, gold_len as f64));
        let support = gold_pairs.len() as f64;
        per_emotion.insert(*label, score);
        weighted += support * score;
        support_total += support;
    }
    SpanScore {
        weighted_avg_proportional_f1: ratio(weighted, support_total),
        per_emotion,
    }
}
