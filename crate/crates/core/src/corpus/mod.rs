//! Conversation data model, dataset I/O, tokenization and the synthetic
//! corpus generator.

mod io;
mod split;
mod synthetic;
mod tokenize;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FeatureVector;
use crate::taxonomy::EmotionLabel;

pub use io::{load_dataset, save_dataset, DatasetFormat};
pub use split::{split_dataset, SplitRatios};
pub use synthetic::{default_protagonists, generate_synthetic, marker_tokens, SyntheticParams};
pub use tokenize::{detokenize, is_punctuation, tokenize, Tokenizer};

/// Scene, movement and personal-state captions attached to an utterance's clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoDescription {
    pub background: String,
    pub movement: String,
    pub personal_state: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    /// 1-based position in the conversation.
    pub index: usize,
    #[serde(default)]
    pub speaker: String,
    pub text: String,
    /// Filled from `text` on load when omitted.
    #[serde(default)]
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vision_features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_description: Option<VideoDescription>,
}

impl Utterance {
    pub fn new(index: usize, speaker: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            index,
            speaker: speaker.into(),
            tokens: tokenize(&text),
            text,
            emotion: None,
            audio_features: None,
            vision_features: None,
            video_description: None,
        }
    }

    pub fn with_emotion(mut self, emotion: EmotionLabel) -> Self {
        self.emotion = Some(emotion);
        self
    }

    pub fn has_speaker(&self) -> bool {
        !self.speaker.trim().is_empty()
    }

    /// Raw text of an inclusive token span, joined the same way the text was produced.
    pub fn span_text(&self, span: TokenSpan) -> Option<String> {
        if span.end >= self.tokens.len() || span.start > span.end {
            return None;
        }
        Some(detokenize(&self.tokens[span.start..=span.end]))
    }
}

/// Inclusive, 0-based token span inside the cause utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct TokenSpan {
    pub start: usize,
    pub end: usize,
}

impl TokenSpan {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlap(&self, other: &TokenSpan) -> usize {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        if lo > hi {
            0
        } else {
            hi - lo + 1
        }
    }
}

impl From<(usize, usize)> for TokenSpan {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<TokenSpan> for (usize, usize) {
    fn from(s: TokenSpan) -> Self {
        (s.start, s.end)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmotionCausePair {
    pub emotion_index: usize,
    pub emotion: EmotionLabel,
    pub cause_index: usize,
    #[serde(default)]
    pub span: Option<TokenSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
    #[serde(default)]
    pub pairs: Vec<EmotionCausePair>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Utterance by 1-based index.
    pub fn utterance(&self, index: usize) -> Option<&Utterance> {
        index.checked_sub(1).and_then(|i| self.utterances.get(i))
    }

    /// Gold emotions, neutral where absent.
    pub fn gold_emotions(&self) -> Vec<EmotionLabel> {
        self.utterances
            .iter()
            .map(|u| u.emotion.unwrap_or(EmotionLabel::Neutral))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Error::validation(&self.id, m);
        for (pos, u) in self.utterances.iter().enumerate() {
            if u.index != pos + 1 {
                return Err(err(format!(
                    "utterance at position {} has index {}, expected {}",
                    pos,
                    u.index,
                    pos + 1
                )));
            }
            if u.tokens != tokenize(&u.text) {
                return Err(err(format!(
                    "tokens of utterance {} do not match the tokenization of its text",
                    u.index
                )));
            }
        }
        let n = self.utterances.len();
        for p in &self.pairs {
            if p.emotion_index == 0 || p.emotion_index > n {
                return Err(err(format!(
                    "pair references emotion utterance {} but conversation has {} utterances",
                    p.emotion_index, n
                )));
            }
            if p.cause_index == 0 || p.cause_index > n {
                return Err(err(format!(
                    "pair references cause utterance {} but conversation has {} utterances",
                    p.cause_index, n
                )));
            }
            if p.emotion.is_neutral() {
                return Err(err(format!(
                    "pair ({}, {}) carries a neutral emotion",
                    p.emotion_index, p.cause_index
                )));
            }
            if let Some(span) = p.span {
                let len = self.utterances[p.cause_index - 1].tokens.len();
                if span.start > span.end || span.end >= len {
                    return Err(err(format!(
                        "span ({}, {}) out of bounds for utterance {} with {} tokens",
                        span.start, span.end, p.cause_index, len
                    )));
                }
            }
        }
        Ok(())
    }
}
