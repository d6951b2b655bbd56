use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use super::{tokenize, Conversation, EmotionCausePair, TokenSpan, Utterance};
use crate::error::{Error, Result};
use crate::taxonomy::EmotionLabel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// The public ECF layout (`conversation_ID`, `conversation`, `emotion-cause_pairs`).
    Ecf,
    /// This crate's own schema: a JSON list of [`Conversation`].
    Native,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ecf" | "ecf_json" => Ok(DatasetFormat::Ecf),
            "native" | "native_json" => Ok(DatasetFormat::Native),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: DatasetFormat) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut conversations = match format {
        DatasetFormat::Native => {
            serde_json::from_str::<Vec<Conversation>>(&raw).map_err(|e| Error::parse(path, e))?
        }
        DatasetFormat::Ecf => {
            let value: Value = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
            parse_ecf(&value)?
        }
    };
    for conv in &mut conversations {
        reindex(conv)?;
        for u in &mut conv.utterances {
            if u.tokens.is_empty() && !u.text.trim().is_empty() {
                u.tokens = tokenize(&u.text);
            }
        }
        conv.validate()?;
    }
    Ok(conversations)
}

pub fn save_dataset(path: impl AsRef<Path>, conversations: &[Conversation]) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(conversations).map_err(|e| Error::parse(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// Maps stored utterance indices onto consecutive 1-based positions, carrying
/// pair references along. Dangling references surface as validation errors.
fn reindex(conv: &mut Conversation) -> Result<()> {
    let consecutive = conv
        .utterances
        .iter()
        .enumerate()
        .all(|(pos, u)| u.index == pos + 1);
    if consecutive {
        return Ok(());
    }
    let mut map = HashMap::new();
    for (pos, u) in conv.utterances.iter_mut().enumerate() {
        if map.insert(u.index, pos + 1).is_some() {
            return Err(Error::validation(
                &conv.id,
                format!("duplicate utterance index {}", u.index),
            ));
        }
        u.index = pos + 1;
    }
    for p in &mut conv.pairs {
        let remap = |old: usize| {
            map.get(&old).copied().ok_or_else(|| {
                Error::validation(&conv.id, format!("pair references missing utterance {old}"))
            })
        };
        p.emotion_index = remap(p.emotion_index)?;
        p.cause_index = remap(p.cause_index)?;
    }
    Ok(())
}

fn parse_ecf(value: &Value) -> Result<Vec<Conversation>> {
    let list = value
        .as_array()
        .ok_or_else(|| Error::validation("<root>", "ECF file must be a JSON list"))?;
    list.iter().enumerate().map(|(i, c)| parse_ecf_conversation(i, c)).collect()
}

fn field<'a>(obj: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| obj.get(*n))
}

fn value_to_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn parse_ecf_conversation(position: usize, conv: &Value) -> Result<Conversation> {
    let id = field(conv, &["conversation_ID", "conversation_id", "id"])
        .map(value_to_string)
        .unwrap_or_else(|| format!("{}", position + 1));
    let utts = field(conv, &["conversation", "utterances"])
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation(&id, "missing `conversation` list"))?;

    let mut utterances = Vec::with_capacity(utts.len());
    for (pos, u) in utts.iter().enumerate() {
        let index = field(u, &["utterance_ID", "utterance_id", "index"])
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .unwrap_or(pos + 1);
        let text = field(u, &["text", "utterance"]).map(value_to_string).unwrap_or_default();
        let speaker = field(u, &["speaker"]).map(value_to_string).unwrap_or_default();
        let mut utt = Utterance::new(index, speaker, text);
        if let Some(e) = field(u, &["emotion"]).and_then(Value::as_str) {
            utt.emotion = Some(e.parse::<EmotionLabel>()?);
        }
        utterances.push(utt);
    }

    let mut pairs = Vec::new();
    if let Some(raw_pairs) = field(conv, &["emotion-cause_pairs", "emotion_cause_pairs", "pairs"])
        .and_then(Value::as_array)
    {
        for raw in raw_pairs {
            let items = raw
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| Error::validation(&id, format!("malformed pair {raw}")))?;
            let emo = value_to_string(&items[0]);
            let cause = value_to_string(&items[1]);
            let (emo_idx, emo_label) = emo
                .split_once('_')
                .ok_or_else(|| Error::validation(&id, format!("malformed emotion key `{emo}`")))?;
            let emotion_index: usize = emo_idx
                .trim()
                .parse()
                .map_err(|_| Error::validation(&id, format!("bad utterance index in `{emo}`")))?;
            let emotion = emo_label.parse::<EmotionLabel>()?;
            let (cause_idx, cause_text) = match cause.split_once('_') {
                Some((i, t)) => (i, Some(t)),
                None => (cause.as_str(), None),
            };
            let cause_index: usize = cause_idx
                .trim()
                .parse()
                .map_err(|_| Error::validation(&id, format!("bad utterance index in `{cause}`")))?;
            let span = cause_text.and_then(|t| {
                let cause_utt = utterances.iter().find(|u| u.index == cause_index)?;
                let found = locate_span(&cause_utt.tokens, &tokenize(t));
                if found.is_none() {
                    log::warn!("conversation {id}: cause span `{t}` not found in utterance {cause_index}");
                }
                found
            });
            pairs.push(EmotionCausePair {
                emotion_index,
                emotion,
                cause_index,
                span,
            });
        }
    }

    Ok(Conversation {
        id,
        utterances,
        pairs,
    })
}

/// First occurrence of `needle` as a contiguous token run in `haystack`.
pub(crate) fn locate_span(haystack: &[String], needle: &[String]) -> Option<TokenSpan> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
        .map(|start| TokenSpan::new(start, start + needle.len() - 1))
}
