use std::collections::{BTreeMap, BTreeSet};

use super::records::PredictionRecord;
use crate::error::{Error, Result};

fn resolve_quorum(m: usize, quorum: Option<usize>) -> Result<usize> {
    if m == 0 {
        return Err(Error::InvalidInput("majority vote needs at least one prediction set".into()));
    }
    let q = quorum.unwrap_or(m / 2 + 1);
    if q == 0 || q > m {
        return Err(Error::Config(format!("vote quorum {q} must lie in 1..={m}")));
    }
    Ok(q)
}

/// Items present in at least `quorum` of the sets (default: strict majority).
pub fn majority_vote<T: Ord + Clone>(sets: &[BTreeSet<T>], quorum: Option<usize>) -> Result<BTreeSet<T>> {
    let q = resolve_quorum(sets.len(), quorum)?;
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for set in sets {
        for item in set {
            *counts.entry(item).or_default() += 1;
        }
    }
    Ok(counts
        .into_iter()
        .filter(|(_, n)| *n >= q)
        .map(|(item, _)| item.clone())
        .collect())
}

/// Votes over labelled pairs from several prediction files. Each surviving
/// pair takes the span proposed by most of its voters, smallest span first
/// on ties.
pub fn ensemble_records(files: &[Vec<PredictionRecord>], quorum: Option<usize>) -> Result<Vec<PredictionRecord>> {
    type Key = (String, usize, usize, crate::taxonomy::EmotionLabel);
    let key = |r: &PredictionRecord| (r.conversation.clone(), r.emotion_index, r.cause_index, r.emotion);
    let sets: Vec<BTreeSet<Key>> = files.iter().map(|f| f.iter().map(key).collect()).collect();
    let kept = majority_vote(&sets, quorum)?;

    type Proposal = (Option<crate::corpus::TokenSpan>, Option<String>);
    let mut proposals: BTreeMap<Key, BTreeMap<Proposal, usize>> = BTreeMap::new();
    for file in files {
        let mut seen = BTreeSet::new();
        for r in file {
            let k = key(r);
            if kept.contains(&k) && seen.insert(k.clone()) {
                *proposals
                    .entry(k)
                    .or_default()
                    .entry((r.span, r.span_text.clone()))
                    .or_default() += 1;
            }
        }
    }
    Ok(proposals
        .into_iter()
        .map(|((conversation, emotion_index, cause_index, emotion), spans)| {
            let best = spans.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(s, _)| s.clone());
            let (span, span_text) = best.unwrap_or((None, None));
            PredictionRecord {
                conversation,
                emotion_index,
                cause_index,
                emotion,
                span,
                span_text,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::TokenSpan;
    use crate::taxonomy::EmotionLabel;

    fn set(items: &[u32]) -> BTreeSet<u32> {
        items.iter().copied().collect()
    }

    #[test]
    fn two_of_three() {
        let out = majority_vote(&[set(&[1, 2]), set(&[2, 3]), set(&[2, 1])], None).unwrap();
        assert_eq!(out, set(&[1, 2]));
    }

    #[test]
    fn identical_sets_are_fixed_points() {
        let s = set(&[4, 5, 6]);
        for m in 1..6 {
            assert_eq!(majority_vote(&vec![s.clone(); m], None).unwrap(), s);
        }
    }

    #[test]
    fn invalid_quorum() {
        assert!(majority_vote::<u32>(&[], None).is_err());
        assert!(majority_vote(&[set(&[1])], Some(2)).is_err());
        assert!(majority_vote(&[set(&[1])], Some(0)).is_err());
    }

    #[test]
    fn records_take_majority_span() {
        let r = |span: (usize, usize)| PredictionRecord {
            conversation: "c".into(),
            emotion_index: 2,
            cause_index: 1,
            emotion: EmotionLabel::Joy,
            span: Some(TokenSpan::from(span)),
            span_text: None,
        };
        let files = vec![vec![r((1, 2))], vec![r((0, 2))], vec![r((0, 2))]];
        let out = ensemble_records(&files, None).unwrap();
        assert_eq!(out, vec![r((0, 2))]);
        let files = vec![vec![r((1, 2))], vec![r((0, 2))], vec![]];
        assert_eq!(ensemble_records(&files, None).unwrap(), vec![r((0, 2))]);
    }
}
