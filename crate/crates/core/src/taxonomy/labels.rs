use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Seven-way emotion taxonomy. Integer codes are stable and used as class indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Neutral = 0,
    Surprise = 1,
    Fear = 2,
    Sadness = 3,
    Joy = 4,
    Disgust = 5,
    Anger = 6,
}

impl EmotionLabel {
    pub const COUNT: usize = 7;

    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Neutral,
        EmotionLabel::Surprise,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
        EmotionLabel::Joy,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
    ];

    /// The six non-neutral labels, in code order.
    pub const EMOTIONAL: [EmotionLabel; 6] = [
        EmotionLabel::Surprise,
        EmotionLabel::Fear,
        EmotionLabel::Sadness,
        EmotionLabel::Joy,
        EmotionLabel::Disgust,
        EmotionLabel::Anger,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Neutral => "neutral",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Joy => "joy",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Anger => "anger",
        }
    }

    pub fn is_neutral(self) -> bool {
        self == EmotionLabel::Neutral
    }

    pub fn coarse(self) -> CoarseLabel {
        coarse_of(self)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == lower)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

/// Coarse polarity layer over [`EmotionLabel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoarseLabel {
    Neutral = 0,
    Positive = 1,
    Negative = 2,
}

impl CoarseLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [CoarseLabel; 3] = [
        CoarseLabel::Neutral,
        CoarseLabel::Positive,
        CoarseLabel::Negative,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            CoarseLabel::Neutral => "neutral",
            CoarseLabel::Positive => "positive",
            CoarseLabel::Negative => "negative",
        }
    }

    /// Fine labels that map onto this coarse label.
    pub fn members(self) -> Vec<EmotionLabel> {
        EmotionLabel::ALL
            .iter()
            .copied()
            .filter(|l| coarse_of(*l) == self)
            .collect()
    }
}

impl fmt::Display for CoarseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Positive = {surprise, joy}; negative = {fear, sadness, disgust, anger}.
pub fn coarse_of(label: EmotionLabel) -> CoarseLabel {
    match label {
        EmotionLabel::Neutral => CoarseLabel::Neutral,
        EmotionLabel::Surprise | EmotionLabel::Joy => CoarseLabel::Positive,
        EmotionLabel::Fear | EmotionLabel::Sadness | EmotionLabel::Disgust | EmotionLabel::Anger => {
            CoarseLabel::Negative
        }
    }
}
