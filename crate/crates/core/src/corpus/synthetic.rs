//! Rule-based synthetic conversations with planted cause phrases.
//!
//! Every non-neutral utterance receives an emotion cue word, and a cause
//! phrase made of marker tokens specific to its emotion is planted in an
//! utterance at most `window` turns earlier (or in the utterance itself).
//! Gold pairs are derived afterwards by one rule: utterance `j` causes
//! emotional utterance `t` iff `t - window <= j <= t` and `j` carries a
//! marker phrase of `t`'s emotion. Marker tokens occur nowhere else.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::{detokenize, Conversation, EmotionCausePair, TokenSpan, Utterance, VideoDescription};
use crate::error::{Error, Result};
use crate::fusion::{FeatureSource, FeatureVector};
use crate::taxonomy::EmotionLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub min_speakers: usize,
    pub max_speakers: usize,
    /// Probability that an utterance is emotional.
    pub p_emotion: f64,
    /// Maximum distance between a cause and its emotion utterance.
    pub window: usize,
    /// Probability that an emotional utterance carries its cue word.
    pub p_cue: f64,
    /// Probability that an utterance has no speaker.
    pub p_empty_speaker: f64,
    pub min_filler: usize,
    pub max_filler: usize,
    /// Attach synthetic audio/vision features and video captions.
    pub with_modalities: bool,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            min_utterances: 4,
            max_utterances: 9,
            min_speakers: 2,
            max_speakers: 4,
            p_emotion: 0.4,
            window: 3,
            p_cue: 0.9,
            p_empty_speaker: 0.03,
            min_filler: 3,
            max_filler: 6,
            with_modalities: false,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic params: {m}")));
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad("need 1 <= min_utterances <= max_utterances");
        }
        if self.min_speakers == 0 || self.min_speakers > self.max_speakers {
            return bad("need 1 <= min_speakers <= max_speakers");
        }
        if self.max_speakers > SPEAKER_POOL.len() {
            return bad("max_speakers exceeds the speaker pool");
        }
        if self.min_filler == 0 || self.min_filler > self.max_filler {
            return bad("need 1 <= min_filler <= max_filler");
        }
        for (name, p) in [
            ("p_emotion", self.p_emotion),
            ("p_cue", self.p_cue),
            ("p_empty_speaker", self.p_empty_speaker),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

const PROTAGONISTS: [&str; 6] = ["Ross", "Rachel", "Monica", "Chandler", "Joey", "Phoebe"];
const SPEAKER_POOL: [&str; 10] = [
    "Ross", "Rachel", "Monica", "Chandler", "Joey", "Phoebe", "Janice", "Gunther", "Waiter", "Mike",
];
const SPEAKER_WEIGHTS: [u32; 10] = [3, 3, 3, 3, 3, 3, 1, 1, 1, 1];

const FILLER: [&str; 48] = [
    "i", "you", "we", "they", "it", "that", "this", "so", "well", "okay", "yeah", "the", "a",
    "to", "and", "of", "in", "on", "with", "for", "is", "was", "have", "do", "know", "think",
    "said", "going", "about", "there", "here", "now", "then", "time", "coffee", "apartment",
    "dinner", "tonight", "tomorrow", "maybe", "sure", "what", "look", "come", "want", "tell",
    "hey", "oh",
];

fn cue_words(label: EmotionLabel) -> &'static [&'static str] {
    match label {
        EmotionLabel::Neutral => &[],
        EmotionLabel::Surprise => &["wow", "whoa", "unbelievable"],
        EmotionLabel::Fear => &["scared", "terrified", "afraid"],
        EmotionLabel::Sadness => &["sad", "heartbroken", "miserable"],
        EmotionLabel::Joy => &["great", "wonderful", "yay"],
        EmotionLabel::Disgust => &["gross", "ew", "disgusting"],
        EmotionLabel::Anger => &["furious", "hate", "unacceptable"],
    }
}

fn trigger_phrases(label: EmotionLabel) -> &'static [&'static [&'static str]] {
    match label {
        EmotionLabel::Neutral => &[],
        EmotionLabel::Surprise => &[&["sudden", "proposal"], &["secret", "twin", "sister"], &["surprise", "visit"]],
        EmotionLabel::Fear => &[&["dark", "alley"], &["spider", "nest"], &["haunted", "basement"]],
        EmotionLabel::Sadness => &[&["lost", "grandma"], &["broke", "up"], &["canceled", "wedding"]],
        EmotionLabel::Joy => &[&["got", "promoted"], &["won", "lottery"], &["made", "up"]],
        EmotionLabel::Disgust => &[&["moldy", "sandwich"], &["dirty", "socks"], &["spoiled", "milk"]],
        EmotionLabel::Anger => &[&["stole", "parking", "spot"], &["ruined", "presentation"], &["smashed", "car"]],
    }
}

/// All tokens used inside planted cause phrases.
pub fn marker_tokens() -> Vec<&'static str> {
    let mut out: Vec<&'static str> = EmotionLabel::EMOTIONAL
        .iter()
        .flat_map(|l| trigger_phrases(*l).iter().flat_map(|p| p.iter().copied()))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Rough ECF-like mix over the six emotions.
const EMOTION_WEIGHTS: [(EmotionLabel, u32); 6] = [
    (EmotionLabel::Joy, 26),
    (EmotionLabel::Surprise, 20),
    (EmotionLabel::Anger, 17),
    (EmotionLabel::Sadness, 14),
    (EmotionLabel::Disgust, 11),
    (EmotionLabel::Fear, 12),
];

const BACKGROUNDS: [&str; 4] = [
    "a coffee shop with a large orange couch",
    "a living room with a purple door",
    "a busy restaurant at night",
    "an office with grey cubicles",
];
const MOVEMENTS: [&str; 4] = [
    "the speaker leans forward",
    "the speaker walks across the room",
    "the speaker sits still holding a cup",
    "the speaker gestures with both hands",
];

fn personal_state(label: EmotionLabel) -> &'static str {
    match label {
        EmotionLabel::Neutral => "the speaker has a calm face",
        EmotionLabel::Surprise => "the speaker's eyes are wide open",
        EmotionLabel::Fear => "the speaker looks tense and pale",
        EmotionLabel::Sadness => "the speaker looks down with teary eyes",
        EmotionLabel::Joy => "the speaker is smiling broadly",
        EmotionLabel::Disgust => "the speaker wrinkles the nose",
        EmotionLabel::Anger => "the speaker frowns with a red face",
    }
}

pub const SYNTHETIC_AUDIO_DIM: usize = 62;
pub const SYNTHETIC_VISION_DIM: usize = 16;

struct Draft {
    speaker: String,
    fillers: Vec<&'static str>,
    punct: &'static str,
    emotion: EmotionLabel,
    trigger: Option<(EmotionLabel, &'static [&'static str])>,
}

/// Deterministic synthetic corpus; a pure function of `(seed, n, params)`.
pub fn generate_synthetic(
    seed: u64,
    n_conversations: usize,
    params: &SyntheticParams,
) -> Result<Vec<Conversation>> {
    params.validate()?;
    if n_conversations == 0 {
        return Err(Error::Config("n_conversations must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_conversations)
        .map(|i| generate_one(&mut rng, format!("syn-{seed}-{i:04}"), params))
        .collect()
}

fn generate_one(rng: &mut ChaCha8Rng, id: String, params: &SyntheticParams) -> Result<Conversation> {
    let n_utt = rng.random_range(params.min_utterances..=params.max_utterances);
    let n_spk = rng.random_range(params.min_speakers..=params.max_speakers);

    let speaker_dist = WeightedIndex::new(SPEAKER_WEIGHTS).expect("static weights");
    let mut speakers: Vec<&str> = Vec::with_capacity(n_spk);
    while speakers.len() < n_spk {
        let s = SPEAKER_POOL[speaker_dist.sample(rng)];
        if !speakers.contains(&s) {
            speakers.push(s);
        }
    }
    let emotion_dist = WeightedIndex::new(EMOTION_WEIGHTS.iter().map(|(_, w)| *w)).expect("static weights");

    let mut drafts: Vec<Draft> = (0..n_utt)
        .map(|_| {
            let speaker = if rng.random_bool(params.p_empty_speaker) {
                String::new()
            } else {
                speakers.choose(rng).expect("non-empty").to_string()
            };
            let n_fill = rng.random_range(params.min_filler..=params.max_filler);
            let fillers = (0..n_fill).map(|_| *FILLER.choose(rng).expect("non-empty")).collect();
            let emotion = if rng.random_bool(params.p_emotion) {
                EMOTION_WEIGHTS[emotion_dist.sample(rng)].0
            } else {
                EmotionLabel::Neutral
            };
            Draft {
                speaker,
                fillers,
                punct: ".",
                emotion,
                trigger: None,
            }
        })
        .collect();

    // Plant a cause for every emotional utterance not already covered by an
    // earlier phrase of the same emotion inside its window.
    for t in 0..n_utt {
        let label = drafts[t].emotion;
        if label.is_neutral() {
            continue;
        }
        let lo = t.saturating_sub(params.window);
        let covered = (lo..=t).any(|j| matches!(drafts[j].trigger, Some((l, _)) if l == label));
        if covered {
            continue;
        }
        let free: Vec<usize> = (lo..=t).filter(|j| drafts[*j].trigger.is_none()).collect();
        match free.choose(rng) {
            Some(&j) => {
                let phrase = *trigger_phrases(label).choose(rng).expect("non-empty");
                drafts[j].trigger = Some((label, phrase));
            }
            None => drafts[t].emotion = EmotionLabel::Neutral,
        }
    }

    let mut utterances = Vec::with_capacity(n_utt);
    let mut spans: Vec<Option<TokenSpan>> = Vec::with_capacity(n_utt);
    for (pos, d) in drafts.iter_mut().enumerate() {
        let mut words: Vec<&str> = d.fillers.clone();
        if !d.emotion.is_neutral() {
            d.punct = "!";
            if rng.random_bool(params.p_cue) {
                let cue = *cue_words(d.emotion).choose(rng).expect("non-empty");
                let at = rng.random_range(0..=words.len());
                words.insert(at, cue);
            }
        } else if rng.random_bool(0.25) {
            d.punct = "?";
        }
        let mut span = None;
        if let Some((_, phrase)) = d.trigger {
            let at = rng.random_range(0..=words.len());
            for (k, w) in phrase.iter().enumerate() {
                words.insert(at + k, w);
            }
            span = Some(TokenSpan::new(at, at + phrase.len() - 1));
        }
        let mut tokens: Vec<String> = words.iter().map(|w| w.to_string()).collect();
        tokens.push(d.punct.to_string());
        if let Some(first) = tokens.first_mut() {
            capitalize(first);
        }
        let text = detokenize(&tokens);
        let mut utt = Utterance::new(pos + 1, d.speaker.clone(), text);
        debug_assert_eq!(utt.tokens, tokens);
        utt.emotion = Some(d.emotion);
        if params.with_modalities {
            attach_modalities(rng, &mut utt, d.emotion);
        }
        utterances.push(utt);
        spans.push(span);
    }

    let mut pairs = Vec::new();
    for t in 0..n_utt {
        let label = drafts[t].emotion;
        if label.is_neutral() {
            continue;
        }
        let lo = t.saturating_sub(params.window);
        for j in lo..=t {
            if matches!(drafts[j].trigger, Some((l, _)) if l == label) {
                pairs.push(EmotionCausePair {
                    emotion_index: t + 1,
                    emotion: label,
                    cause_index: j + 1,
                    span: spans[j],
                });
            }
        }
    }

    let conv = Conversation {
        id,
        utterances,
        pairs,
    };
    conv.validate()?;
    Ok(conv)
}

fn capitalize(word: &mut String) {
    if let Some(c) = word.chars().next() {
        if c.is_ascii_lowercase() {
            word.replace_range(0..1, &c.to_ascii_uppercase().to_string());
        }
    }
}

fn attach_modalities(rng: &mut ChaCha8Rng, utt: &mut Utterance, label: EmotionLabel) {
    let noise = Normal::new(0.0, 1.0).expect("valid normal");
    let code = label.code();
    let audio: Vec<f64> = (0..SYNTHETIC_AUDIO_DIM)
        .map(|k| {
            let signal = if k % EmotionLabel::COUNT == code { 1.5 } else { 0.0 };
            signal + noise.sample(rng)
        })
        .collect();
    let vision: Vec<f64> = (0..SYNTHETIC_VISION_DIM)
        .map(|k| {
            let signal = if k == code { 1.0 } else { 0.0 };
            signal + 0.5 * noise.sample(rng)
        })
        .collect();
    utt.audio_features = Some(FeatureVector::new(audio, FeatureSource::Gemaps).expect("finite"));
    utt.vision_features = Some(FeatureVector::new(vision, FeatureSource::FaceEmotion).expect("finite"));
    utt.video_description = Some(VideoDescription {
        background: BACKGROUNDS.choose(rng).expect("non-empty").to_string(),
        movement: MOVEMENTS.choose(rng).expect("non-empty").to_string(),
        personal_state: personal_state(label).to_string(),
    });
}

/// Main cast used by the generator; everyone else is a supporting speaker.
pub fn default_protagonists() -> Vec<String> {
    PROTAGONISTS.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn deterministic_for_a_seed() {
        let p = SyntheticParams::default();
        let a = generate_synthetic(1, 1, &p).unwrap();
        let b = generate_synthetic(1, 1, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(2, 1, &p).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn spans_in_bounds_over_many_conversations() {
        let convs = generate_synthetic(7, 1000, &SyntheticParams::default()).unwrap();
        for c in &convs {
            c.validate().unwrap();
            for p in &c.pairs {
                let span = p.span.expect("synthetic pairs always carry spans");
                let len = c.utterance(p.cause_index).unwrap().tokens.len();
                assert!(span.start <= span.end && span.end < len);
                assert!(p.cause_index <= p.emotion_index);
                assert!(p.emotion_index - p.cause_index <= SyntheticParams::default().window);
            }
        }
    }

    #[test]
    fn markers_appear_only_inside_gold_spans() {
        let markers: HashSet<&str> = marker_tokens().into_iter().collect();
        let convs = generate_synthetic(11, 300, &SyntheticParams::default()).unwrap();
        for c in &convs {
            let mut covered: HashSet<(usize, usize)> = HashSet::new();
            for p in &c.pairs {
                let s = p.span.unwrap();
                for k in s.start..=s.end {
                    covered.insert((p.cause_index, k));
                    let tok = c.utterance(p.cause_index).unwrap().tokens[k].to_lowercase();
                    assert!(markers.contains(tok.as_str()), "{tok} inside span is not a marker");
                }
            }
            for u in &c.utterances {
                for (k, tok) in u.tokens.iter().enumerate() {
                    if markers.contains(tok.to_lowercase().as_str()) {
                        assert!(covered.contains(&(u.index, k)), "stray marker {tok} in {}", c.id);
                    }
                }
            }
        }
    }

    #[test]
    fn neutral_is_the_majority_label() {
        let convs = generate_synthetic(3, 400, &SyntheticParams::default()).unwrap();
        let labels: Vec<EmotionLabel> = convs.iter().flat_map(|c| c.gold_emotions()).collect();
        let neutral = labels.iter().filter(|l| l.is_neutral()).count();
        assert!(neutral * 2 > labels.len());
        for l in EmotionLabel::EMOTIONAL {
            assert!(labels.contains(&l), "{l} never generated");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SyntheticParams {
            min_utterances: 5,
            max_utterances: 2,
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(1, 3, &p), Err(Error::Config(_))));
        assert!(generate_synthetic(1, 0, &SyntheticParams::default()).is_err());
    }

    #[test]
    fn modalities_attached_on_request() {
        let p = SyntheticParams {
            with_modalities: true,
            ..Default::default()
        };
        let convs = generate_synthetic(5, 3, &p).unwrap();
        let u = &convs[0].utterances[0];
        assert_eq!(u.audio_features.as_ref().unwrap().dim(), SYNTHETIC_AUDIO_DIM);
        assert!(u.video_description.is_some());
    }
}
