use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{f1, ratio};
use crate::error::{Error, Result};
use crate::taxonomy::EmotionLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErcScore {
    /// Support-weighted F1 over the scored classes.
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub per_class_f1: BTreeMap<EmotionLabel, f64>,
    /// Number of utterances left after filtering.
    pub scored: usize,
    /// Set when filtering removed every utterance; all scores are then 0.
    pub empty_after_filtering: bool,
}

/// Emotion recognition scores with gold-neutral utterances removed first.
pub fn erc_scores(pred: &[EmotionLabel], gold: &[EmotionLabel]) -> Result<ErcScore> {
    erc_scores_with(pred, gold, true)
}

/// With `exclude_neutral`, utterances whose gold label is neutral are
/// dropped and the neutral class is not scored; predicting neutral for an
/// emotional utterance is still a miss.
pub fn erc_scores_with(pred: &[EmotionLabel], gold: &[EmotionLabel], exclude_neutral: bool) -> Result<ErcScore> {
    if pred.len() != gold.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    let kept: Vec<(EmotionLabel, EmotionLabel)> = pred
        .iter()
        .zip(gold)
        .filter(|(_, g)| !(exclude_neutral && g.is_neutral()))
        .map(|(p, g)| (*p, *g))
        .collect();
    if kept.is_empty() {
        return Ok(ErcScore {
            weighted_f1: 0.0,
            accuracy: 0.0,
            per_class_f1: BTreeMap::new(),
            scored: 0,
            empty_after_filtering: true,
        });
    }

    let classes: Vec<EmotionLabel> = if exclude_neutral {
        EmotionLabel::EMOTIONAL.to_vec()
    } else {
        EmotionLabel::ALL.to_vec()
    };
    let mut per_class_f1 = BTreeMap::new();
    let mut weighted = 0.0;
    let mut total_support = 0.0;
    for c in classes {
        let tp = kept.iter().filter(|(p, g)| *p == c && *g == c).count() as f64;
        let predicted = kept.iter().filter(|(p, _)| *p == c).count() as f64;
        let support = kept.iter().filter(|(_, g)| *g == c).count() as f64;
        if support == 0.0 && predicted == 0.0 {
            continue;
        }
        let score = f1(ratio(tp, predicted), ratio(tp, support));
        per_class_f1.insert(c, score);
        weighted += support * score;
        total_support += support;
    }
    let correct = kept.iter().filter(|(p, g)| p == g).count() as f64;
    Ok(ErcScore {
        weighted_f1: ratio(weighted, total_support),
        accuracy: correct / kept.len() as f64,
        per_class_f1,
        scored: kept.len(),
        empty_after_filtering: false,
    })
}
