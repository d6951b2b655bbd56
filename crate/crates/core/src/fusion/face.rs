use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{FeatureSource, FeatureVector};
use crate::error::{Error, Result};

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceObservation {
    pub bbox: BoundingBox,
    pub identity_embedding: Vec<f64>,
    pub emotion_embedding: Vec<f64>,
}

impl FaceObservation {
    pub fn new(bbox: BoundingBox, identity_embedding: Vec<f64>, emotion_embedding: Vec<f64>) -> Result<Self> {
        if !(bbox.w > 0.0 && bbox.h > 0.0) {
            return Err(Error::InvalidInput(format!("face box {}x{} must have positive size", bbox.w, bbox.h)));
        }
        if identity_embedding.iter().chain(&emotion_embedding).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("face embedding has non-finite values".into()));
        }
        Ok(Self {
            bbox,
            identity_embedding,
            emotion_embedding,
        })
    }
}

fn normalized(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0 && norm.is_finite()).then(|| v.iter().map(|x| x / norm).collect())
}

/// Reference identity embeddings per protagonist, stored unit-length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDatabase {
    entries: BTreeMap<String, Vec<Vec<f64>>>,
    pub threshold: f64,
}

impl MatchDatabase {
    pub fn new(threshold: f64) -> Self {
        Self {
            entries: BTreeMap::new(),
            threshold,
        }
    }

    pub fn insert(&mut self, protagonist: impl Into<String>, embedding: &[f64]) -> Result<()> {
        let unit = normalized(embedding)
            .ok_or_else(|| Error::InvalidInput("database embedding must be finite and non-zero".into()))?;
        if let Some(dim) = self.dim() {
            if dim != unit.len() {
                return Err(Error::Shape(format!("database embeddings have width {dim}, got {}", unit.len())));
            }
        }
        self.entries.entry(protagonist.into()).or_default().push(unit);
        Ok(())
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.values().flatten().next().map(Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn protagonists(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Best cosine similarity over all entries; ties go to the
    /// alphabetically first protagonist.
    pub fn best_match(&self, embedding: &[f64]) -> Option<(String, f64)> {
        let q = normalized(embedding)?;
        let mut best: Option<(&str, f64)> = None;
        for (name, embs) in &self.entries {
            for e in embs {
                if e.len() != q.len() {
                    continue;
                }
                let sim: f64 = e.iter().zip(&q).map(|(a, b)| a * b).sum();
                if best.is_none_or(|(_, s)| sim > s) {
                    best = Some((name, sim));
                }
            }
        }
        best.map(|(n, s)| (n.to_string(), s))
    }
}

/// Protagonist whose reference face is most similar, if that similarity
/// reaches the threshold. Zero-norm queries match nobody.
pub fn match_face(observation: &FaceObservation, db: &MatchDatabase) -> Result<Option<String>> {
    if db.is_empty() {
        return Err(Error::Config("face matching database is empty".into()));
    }
    if normalized(&observation.identity_embedding).is_none() {
        log::warn!("face observation has a zero identity embedding; treating it as unmatched");
        return Ok(None);
    }
    Ok(db
        .best_match(&observation.identity_embedding)
        .filter(|(_, sim)| *sim >= db.threshold)
        .map(|(name, _)| name))
}

/// Emotion features for one utterance: the speaker's matched face if any,
/// otherwise the largest face, otherwise zeros.
pub fn face_features_for_utterance(
    observations: &[FaceObservation],
    speaker: &str,
    db: &MatchDatabase,
    out_dim: usize,
) -> FeatureVector {
    let pick = |o: &FaceObservation| {
        let mut v = o.emotion_embedding.clone();
        v.resize(out_dim, 0.0);
        FeatureVector::new(v, FeatureSource::FaceEmotion).unwrap_or_else(|_| FeatureVector::zeros(out_dim, FeatureSource::FaceEmotion))
    };
    if db.contains(speaker) {
        let matched = observations
            .iter()
            .find(|o| matches!(match_face(o, db), Ok(Some(name)) if name == speaker));
        if let Some(o) = matched {
            return pick(o);
        }
    }
    let largest = observations.iter().fold(None::<&FaceObservation>, |best, o| match best {
        Some(b) if b.bbox.area() >= o.bbox.area() => Some(b),
        _ => Some(o),
    });
    match largest {
        Some(o) => pick(o),
        None => FeatureVector::zeros(out_dim, FeatureSource::FaceEmotion),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(w: f64, h: f64, id: Vec<f64>, emo: f64) -> FaceObservation {
        FaceObservation::new(BoundingBox { x: 0.0, y: 0.0, w, h }, id, vec![emo; 2]).unwrap()
    }

    fn db() -> MatchDatabase {
        let mut db = MatchDatabase::new(DEFAULT_MATCH_THRESHOLD);
        db.insert("Ross", &[1.0, 0.0, 0.0]).unwrap();
        db.insert("Ross", &[0.9, 0.1, 0.0]).unwrap();
        db.insert("Rachel", &[0.0, 1.0, 0.0]).unwrap();
        db.insert("Rachel", &[0.0, 0.9, 0.1]).unwrap();
        db
    }

    #[test]
    fn exact_embedding_matches() {
        let o = obs(1.0, 1.0, vec![0.0, 2.0, 0.0], 0.0);
        assert_eq!(match_face(&o, &db()).unwrap().as_deref(), Some("Rachel"));
        let mut strict = db();
        strict.threshold = 1.01;
        assert_eq!(match_face(&o, &strict).unwrap(), None);
        let zero = obs(1.0, 1.0, vec![0.0; 3], 0.0);
        assert_eq!(match_face(&zero, &db()).unwrap(), None);
        assert!(match_face(&o, &MatchDatabase::new(0.6)).is_err());
    }

    #[test]
    fn fallback_rules() {
        let d = db();
        assert_eq!(face_features_for_utterance(&[], "Ross", &d, 2).values(), &[0.0, 0.0]);
        let small_ross = obs(1.0, 1.0, vec![1.0, 0.0, 0.0], 1.0);
        let big_other = obs(5.0, 5.0, vec![0.0, 0.0, 1.0], 2.0);
        let mid_rachel = obs(2.0, 2.0, vec![0.0, 1.0, 0.0], 3.0);
        let faces = [big_other.clone(), small_ross, mid_rachel];
        assert_eq!(face_features_for_utterance(&faces, "Ross", &d, 2).values(), &[1.0, 1.0]);
        assert_eq!(face_features_for_utterance(&faces, "Gunther", &d, 2).values(), &[2.0, 2.0]);
        assert_eq!(face_features_for_utterance(&faces, "Monica", &d, 2).values(), &[2.0, 2.0]);
    }

    #[test]
    fn invalid_observations() {
        let b = BoundingBox { x: 0.0, y: 0.0, w: 0.0, h: 1.0 };
        assert!(FaceObservation::new(b, vec![1.0], vec![1.0]).is_err());
    }
}
