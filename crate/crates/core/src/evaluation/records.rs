use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, TokenSpan};
use crate::error::{Error, Result};
use crate::taxonomy::EmotionLabel;

/// One emotion-cause pair, optionally with its cause span.
///
/// Serialised as a JSON line
/// `{"conv", "emotion_utt": "U3", "emotion", "cause_utt": "U2", "span_tokens", "span_text"}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawRecord", into = "RawRecord")]
pub struct PredictionRecord {
    pub conversation: String,
    pub emotion_index: usize,
    pub cause_index: usize,
    pub emotion: EmotionLabel,
    pub span: Option<TokenSpan>,
    pub span_text: Option<String>,
}

impl PredictionRecord {
    /// Key used for pair matching, without the label.
    pub fn pair_key(&self) -> (&str, usize, usize) {
        (&self.conversation, self.emotion_index, self.cause_index)
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    conv: String,
    emotion_utt: String,
    emotion: EmotionLabel,
    cause_utt: String,
    span_tokens: Option<TokenSpan>,
    span_text: Option<String>,
}

fn parse_utt(s: &str) -> std::result::Result<usize, String> {
    s.strip_prefix('U')
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .ok_or_else(|| format!("utterance reference `{s}` is not of the form U<n>"))
}

impl TryFrom<RawRecord> for PredictionRecord {
    type Error = String;

    fn try_from(r: RawRecord) -> std::result::Result<Self, String> {
        Ok(Self {
            conversation: r.conv,
            emotion_index: parse_utt(&r.emotion_utt)?,
            cause_index: parse_utt(&r.cause_utt)?,
            emotion: r.emotion,
            span: r.span_tokens,
            span_text: r.span_text,
        })
    }
}

impl From<PredictionRecord> for RawRecord {
    fn from(r: PredictionRecord) -> Self {
        Self {
            conv: r.conversation,
            emotion_utt: format!("U{}", r.emotion_index),
            emotion: r.emotion,
            cause_utt: format!("U{}", r.cause_index),
            span_tokens: r.span,
            span_text: r.span_text,
        }
    }
}

/// Competition-style rendering, e.g. `U3_joy, U2_"You made up!"`.
pub fn format_competition(record: &PredictionRecord) -> String {
    let cause = match &record.span_text {
        Some(text) => format!("U{}_\"{}\"", record.cause_index, text),
        None => format!("U{}", record.cause_index),
    };
    format!("U{}_{}, {}", record.emotion_index, record.emotion, cause)
}

/// Gold pairs of one conversation as records, with span text recovered.
pub fn records_for_conversation(conversation: &Conversation) -> Vec<PredictionRecord> {
    let mut out: Vec<PredictionRecord> = conversation
        .pairs
        .iter()
        .map(|p| PredictionRecord {
            conversation: conversation.id.clone(),
            emotion_index: p.emotion_index,
            cause_index: p.cause_index,
            emotion: p.emotion,
            span: p.span,
            span_text: p
                .span
                .and_then(|s| conversation.utterance(p.cause_index).and_then(|u| u.span_text(s))),
        })
        .collect();
    out.sort();
    out
}

pub fn gold_records(conversations: &[Conversation]) -> Vec<PredictionRecord> {
    conversations.iter().flat_map(records_for_conversation).collect()
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::parse(path, e))?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(path, e)))
        .collect()
}
