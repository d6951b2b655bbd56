#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ecpec_core::corpus::TokenSpan;
use ecpec_core::evaluation::PredictionRecord;
use ecpec_core::taxonomy::EmotionLabel;
use serde::Deserialize;

pub fn fixture(path: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(path)
}

/// Parses `"a/b"` or an integer into a float.
pub fn fraction(s: &str) -> f64 {
    match s.split_once('/') {
        Some((n, d)) => n.trim().parse::<f64>().unwrap() / d.trim().parse::<f64>().unwrap(),
        None => s.trim().parse().unwrap(),
    }
}

/// `[conv, emotion_utt, cause_utt, emotion, [start, end] | null]`
#[derive(Deserialize)]
pub struct CompactRecord(String, usize, usize, EmotionLabel, Option<(usize, usize)>);

impl From<&CompactRecord> for PredictionRecord {
    fn from(r: &CompactRecord) -> Self {
        PredictionRecord {
            conversation: r.0.clone(),
            emotion_index: r.1,
            cause_index: r.2,
            emotion: r.3,
            span: r.4.map(|(s, e)| TokenSpan::new(s, e)),
            span_text: None,
        }
    }
}

pub fn records(rs: &[CompactRecord]) -> Vec<PredictionRecord> {
    rs.iter().map(PredictionRecord::from).collect()
}

#[derive(Deserialize)]
pub struct ErcCase {
    pub name: String,
    pub gold: Vec<EmotionLabel>,
    pub pred: Vec<EmotionLabel>,
    pub exclude_neutral: bool,
    pub weighted_f1: String,
    pub accuracy: String,
    pub scored: usize,
}

#[derive(Deserialize)]
pub struct PairCase {
    pub name: String,
    pub gold: Vec<CompactRecord>,
    pub pred: Vec<CompactRecord>,
    pub strict_label: bool,
    pub precision: String,
    pub recall: String,
    pub pos_f1: String,
}

#[derive(Deserialize)]
pub struct SpanCase {
    pub name: String,
    pub gold: Vec<CompactRecord>,
    pub pred: Vec<CompactRecord>,
    pub weighted: String,
}

pub fn load_cases<T: for<'de> Deserialize<'de>>(name: &str) -> Vec<T> {
    let text = std::fs::read_to_string(fixture(&format!("metrics/{name}"))).unwrap();
    serde_json::from_str(&text).unwrap()
}
