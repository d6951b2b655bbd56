//! Cause span extraction.
//!
//! The input is `[CLS] target [SEP] candidate [SEP] history` with one
//! segment id per region. A linear head scores every candidate token as a
//! span start; the end head scores `[h_start ‖ h_j]` through one tanh layer,
//! so during training it is conditioned on the gold start. A third head
//! predicts the target's emotion from the `[CLS]` position.
//!
//! Decoding keeps the top-k starts, the top-k ends of each, and returns the
//! pair with the largest `start_logit + end_logit`; ties go to the smallest
//! `(start, end)`.

use std::ops::Range;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, TokenSpan};
use crate::encoder::{TextEncoder, TokenSequence, CLS, SEP};
use crate::error::{Error, Result};
use crate::evaluation::{span_proportional_f1, PredictionRecord};
use crate::nn::layers::{init_linear, linear};
use crate::nn::{Adam, AdamConfig, Gradients, Graph, Manifest, ParameterStore, Var};
use crate::taxonomy::EmotionLabel;

pub const SEGMENT_TARGET: usize = 0;
pub const SEGMENT_CANDIDATE: usize = 1;
pub const SEGMENT_HISTORY: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanModelConfig {
    /// Weight of the emotion cross-entropy.
    pub beta: f64,
    /// Number of start (and per-start end) candidates kept while decoding.
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for SpanModelConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            k: 5,
            dim: 64,
            seed: 0,
        }
    }
}

impl SpanModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("span beta must be a non-negative number".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("span k must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("span dim must be positive".into()));
        }
        Ok(())
    }
}

/// Tokens of the three regions with their segment ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanInput {
    pub tokens: Vec<String>,
    pub segments: Vec<usize>,
    /// Positions of the candidate utterance's tokens in `tokens`.
    pub candidate: Range<usize>,
}

impl SpanInput {
    /// Builds the input for target `emotion_index` and candidate
    /// `cause_index` (both 1-based). History is `U_1..U_{t-1}`, trimmed from
    /// the oldest token to fit `max_tokens`; an over-long target keeps its
    /// leading tokens.
    pub fn build(conversation: &Conversation, emotion_index: usize, cause_index: usize, max_tokens: usize) -> Result<Self> {
        let target = conversation.utterance(emotion_index);
        let cand = conversation.utterance(cause_index);
        let (Some(target), Some(cand)) = (target, cand) else {
            return Err(Error::validation(
                &conversation.id,
                format!("no utterance pair ({emotion_index}, {cause_index})"),
            ));
        };
        if cand.tokens.is_empty() {
            return Err(Error::validation(
                &conversation.id,
                format!("candidate utterance {cause_index} has no tokens"),
            ));
        }
        if cand.tokens.len() + 3 > max_tokens {
            return Err(Error::InvalidInput(format!(
                "candidate utterance {cause_index} of {} has {} tokens, more than max_tokens {max_tokens} allows",
                conversation.id,
                cand.tokens.len()
            )));
        }
        let target_take = target.tokens.len().min(max_tokens - 3 - cand.tokens.len());
        let mut tokens = vec![CLS.to_string()];
        let mut segments = vec![SEGMENT_TARGET];
        tokens.extend(target.tokens[..target_take].iter().cloned());
        tokens.push(SEP.to_string());
        segments.resize(tokens.len(), SEGMENT_TARGET);
        let start = tokens.len();
        tokens.extend(cand.tokens.iter().cloned());
        let candidate = start..tokens.len();
        tokens.push(SEP.to_string());
        segments.resize(tokens.len(), SEGMENT_CANDIDATE);

        let history: Vec<&String> = conversation.utterances[..emotion_index - 1]
            .iter()
            .flat_map(|u| u.tokens.iter())
            .collect();
        let room = max_tokens - tokens.len();
        let skip = history.len().saturating_sub(room);
        tokens.extend(history[skip..].iter().map(|t| t.to_string()));
        segments.resize(tokens.len(), SEGMENT_HISTORY);
        Ok(Self {
            tokens,
            segments,
            candidate,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn candidate_mask(&self) -> Vec<bool> {
        (0..self.len()).map(|p| self.candidate.contains(&p)).collect()
    }
}

/// A training example: one gold pair with its span.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanExample {
    pub conversation_id: String,
    pub emotion_index: usize,
    pub cause_index: usize,
    pub emotion: EmotionLabel,
    pub input: SpanInput,
    /// Gold span relative to the candidate utterance.
    pub span: TokenSpan,
}

/// One example per gold pair that has a span.
pub fn span_examples(conversations: &[Conversation], max_tokens: usize) -> Result<Vec<SpanExample>> {
    let mut out = Vec::new();
    for c in conversations {
        for p in &c.pairs {
            let Some(span) = p.span else { continue };
            out.push(SpanExample {
                conversation_id: c.id.clone(),
                emotion_index: p.emotion_index,
                cause_index: p.cause_index,
                emotion: p.emotion,
                input: SpanInput::build(c, p.emotion_index, p.cause_index, max_tokens)?,
                span,
            });
        }
    }
    Ok(out)
}

pub struct SpanForward {
    pub reps: Var,
    /// `1 × n` raw start logits; use the candidate mask when normalising.
    pub start_logits: Var,
    /// `1 × 7` emotion logits.
    pub emotion_logits: Var,
}

/// Decoded span relative to the candidate utterance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanDecode {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl SpanDecode {
    pub fn span(&self) -> TokenSpan {
        TokenSpan::new(self.start, self.end)
    }
}

/// Indices of the `k` largest finite values, largest first, lower index on ties.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).filter(|&i| values[i] > f64::NEG_INFINITY).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

fn better(score: f64, pair: (usize, usize), best: &Option<(f64, usize, usize)>) -> bool {
    match best {
        None => true,
        Some((s, bs, be)) => score > *s || (score == *s && pair < (*bs, *be)),
    }
}

/// Top-k decoding over masked logits (`-inf` marks invalid positions).
/// `end_logits(s)` must return masked end logits for start `s`.
pub fn decode_topk(start_logits: &[f64], mut end_logits: impl FnMut(usize) -> Vec<f64>, k: usize) -> Option<(usize, usize, f64)> {
    let mut best = None;
    for s in top_k(start_logits, k) {
        let ends = end_logits(s);
        for e in top_k(&ends, k) {
            let score = start_logits[s] + ends[e];
            if better(score, (s, e), &best) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(score, s, e)| (s, e, score))
}

/// Exhaustive argmax over every valid `(start, end)`.
pub fn decode_exhaustive(start_logits: &[f64], mut end_logits: impl FnMut(usize) -> Vec<f64>) -> Option<(usize, usize, f64)> {
    let mut best = None;
    for (s, &sv) in start_logits.iter().enumerate() {
        if sv == f64::NEG_INFINITY {
            continue;
        }
        let ends = end_logits(s);
        for (e, &v) in ends.iter().enumerate() {
            if v == f64::NEG_INFINITY {
                continue;
            }
            let score = sv + v;
            if better(score, (s, e), &best) {
                best = Some((score, s, e));
            }
        }
    }
    best.map(|(score, s, e)| (s, e, score))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanModel {
    pub config: SpanModelConfig,
    pub encoder: TextEncoder,
}

const PREFIX: &str = "span";

impl SpanModel {
    /// The encoder must have three segments and width `config.dim`.
    pub fn new(config: SpanModelConfig, encoder: TextEncoder) -> Result<Self> {
        config.validate()?;
        if encoder.config.dim != config.dim {
            return Err(Error::Config(format!(
                "span encoder dim {} differs from span dim {}",
                encoder.config.dim, config.dim
            )));
        }
        if encoder.config.n_segments != 3 {
            return Err(Error::Config("span encoder needs exactly 3 segments".into()));
        }
        Ok(Self { config, encoder })
    }

    pub fn max_tokens(&self) -> usize {
        self.encoder.config.max_tokens
    }

    pub fn init_params(&self) -> ParameterStore {
        let d = self.config.dim;
        let mut store = ParameterStore::new();
        self.encoder.init_params(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        init_linear(&mut store, &format!("{PREFIX}.start"), d, 1, &mut rng);
        init_linear(&mut store, &format!("{PREFIX}.end.fc1"), 2 * d, d, &mut rng);
        init_linear(&mut store, &format!("{PREFIX}.end.fc2"), d, 1, &mut rng);
        init_linear(&mut store, &format!("{PREFIX}.emo"), d, EmotionLabel::COUNT, &mut rng);
        store
    }

    pub fn manifest(&self) -> Manifest {
        self.init_params().manifest()
    }

    fn sequence(&self, input: &SpanInput) -> TokenSequence {
        TokenSequence {
            ids: input.tokens.iter().map(|t| self.encoder.vocab.id(t)).collect(),
            groups: vec![0; input.len()],
            segments: Some(input.segments.clone()),
        }
    }

    pub fn forward(&self, g: &mut Graph, input: &SpanInput) -> SpanForward {
        let reps = self.encoder.forward(g, &self.sequence(input));
        let start = linear(g, reps, &format!("{PREFIX}.start"));
        let start_logits = g.transpose(start);
        let cls = g.row(reps, 0);
        let emotion_logits = linear(g, cls, &format!("{PREFIX}.emo"));
        SpanForward {
            reps,
            start_logits,
            emotion_logits,
        }
    }

    /// `1 × n` end logits for a start position (absolute, inside the
    /// candidate region), plus the mask of valid ends.
    pub fn end_logits_given_start(
        &self,
        g: &mut Graph,
        reps: Var,
        input: &SpanInput,
        start: usize,
    ) -> Result<(Var, Vec<bool>)> {
        if !input.candidate.contains(&start) {
            return Err(Error::InvalidInput(format!(
                "start {start} outside candidate region {:?}",
                input.candidate
            )));
        }
        let n = input.len();
        let hs = g.gather_rows(reps, &vec![Some(start); n]);
        let pair = g.concat_cols(&[hs, reps]);
        let h = linear(g, pair, &format!("{PREFIX}.end.fc1"));
        let h = g.tanh(h);
        let logits = linear(g, h, &format!("{PREFIX}.end.fc2"));
        let mask = (0..n).map(|j| j >= start && input.candidate.contains(&j)).collect();
        Ok((g.transpose(logits), mask))
    }

    /// Teacher-forced loss: start CE + end CE given the gold start + `β`
    /// times emotion CE.
    pub fn loss(&self, g: &mut Graph, example: &SpanExample) -> Result<Var> {
        let input = &example.input;
        let offset = input.candidate.start;
        let (s, e) = (offset + example.span.start, offset + example.span.end);
        if e >= input.candidate.end || s > e {
            return Err(Error::InvalidInput(format!(
                "gold span {:?} outside candidate of {} tokens",
                example.span,
                input.candidate.len()
            )));
        }
        let fwd = self.forward(g, input);
        let start_loss = g.cross_entropy(fwd.start_logits, Some(&input.candidate_mask()), s);
        let (end_logits, end_mask) = self.end_logits_given_start(g, fwd.reps, input, s)?;
        let end_loss = g.cross_entropy(end_logits, Some(&end_mask), e);
        let span_loss = g.add(start_loss, end_loss);
        if self.config.beta == 0.0 {
            return Ok(span_loss);
        }
        let emo = g.cross_entropy(fwd.emotion_logits, None, example.emotion.code());
        let emo = g.scale(emo, self.config.beta);
        Ok(g.add(span_loss, emo))
    }

    /// Masked start logits over all positions (`-inf` outside the candidate).
    pub fn start_scores(&self, params: &ParameterStore, input: &SpanInput) -> Vec<f64> {
        let mut g = Graph::new(params);
        let fwd = self.forward(&mut g, input);
        mask_row(g.value(fwd.start_logits).row(0).to_vec(), &input.candidate_mask())
    }

    fn decode_with(
        &self,
        params: &ParameterStore,
        input: &SpanInput,
        k: Option<usize>,
    ) -> Result<SpanDecode> {
        if input.candidate.is_empty() {
            return Err(Error::InvalidInput("empty candidate region".into()));
        }
        let mut g = Graph::new(params);
        let fwd = self.forward(&mut g, input);
        let starts = mask_row(g.value(fwd.start_logits).row(0).to_vec(), &input.candidate_mask());
        let reps = fwd.reps;
        let mut ends = |s: usize| {
            let (v, mask) = self
                .end_logits_given_start(&mut g, reps, input, s)
                .expect("decoder only proposes candidate starts");
            mask_row(g.value(v).row(0).to_vec(), &mask)
        };
        let best = match k {
            Some(k) => decode_topk(&starts, &mut ends, k),
            None => decode_exhaustive(&starts, &mut ends),
        };
        let (s, e, score) = best.ok_or_else(|| Error::InvalidInput("no valid span".into()))?;
        Ok(SpanDecode {
            start: s - input.candidate.start,
            end: e - input.candidate.start,
            score,
        })
    }

    pub fn infer_span_topk(&self, params: &ParameterStore, input: &SpanInput, k: usize) -> Result<SpanDecode> {
        if k == 0 {
            return Err(Error::Config("span k must be at least 1".into()));
        }
        self.decode_with(params, input, Some(k))
    }

    pub fn brute_force_span(&self, params: &ParameterStore, input: &SpanInput) -> Result<SpanDecode> {
        self.decode_with(params, input, None)
    }

    /// Attaches decoded spans and their text to span-less pair records.
    pub fn attach_spans(
        &self,
        params: &ParameterStore,
        conversations: &[Conversation],
        records: &[PredictionRecord],
    ) -> Result<Vec<PredictionRecord>> {
        let by_id: std::collections::BTreeMap<&str, &Conversation> =
            conversations.iter().map(|c| (c.id.as_str(), c)).collect();
        records
            .iter()
            .map(|r| {
                let conv = by_id.get(r.conversation.as_str()).ok_or_else(|| {
                    Error::InvalidInput(format!("prediction for unknown conversation {}", r.conversation))
                })?;
                let input = SpanInput::build(conv, r.emotion_index, r.cause_index, self.max_tokens())?;
                let d = self.infer_span_topk(params, &input, self.config.k)?;
                let mut out = r.clone();
                out.span = Some(d.span());
                out.span_text = conv.utterance(r.cause_index).and_then(|u| u.span_text(d.span()));
                Ok(out)
            })
            .collect()
    }
}

fn mask_row(mut values: Vec<f64>, mask: &[bool]) -> Vec<f64> {
    for (v, m) in values.iter_mut().zip(mask) {
        if !m {
            *v = f64::NEG_INFINITY;
        }
    }
    values
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CseTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub log_metrics: bool,
    pub seed: u64,
}

impl Default for CseTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            optimizer: AdamConfig::default(),
            log_metrics: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub exact_match: Option<f64>,
    pub proportional_f1: Option<f64>,
}

/// Exact-match rate and proportional F1 of decoded spans against gold.
pub fn span_metrics(model: &SpanModel, params: &ParameterStore, examples: &[SpanExample]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut hits = 0;
    let mut pred = Vec::with_capacity(examples.len());
    let mut gold = Vec::with_capacity(examples.len());
    for ex in examples {
        let d = model.infer_span_topk(params, &ex.input, model.config.k)?;
        hits += usize::from(d.span() == ex.span);
        let record = |span| PredictionRecord {
            conversation: ex.conversation_id.clone(),
            emotion_index: ex.emotion_index,
            cause_index: ex.cause_index,
            emotion: ex.emotion,
            span: Some(span),
            span_text: None,
        };
        pred.push(record(d.span()));
        gold.push(record(ex.span));
    }
    let f1 = span_proportional_f1(&pred, &gold).weighted_avg_proportional_f1;
    Ok((hits as f64 / examples.len() as f64, f1))
}

pub fn span_gradients(model: &SpanModel, params: &ParameterStore, example: &SpanExample) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(params);
    let loss = model.loss(&mut g, example)?;
    Ok((g.scalar(loss), g.backward(loss)))
}

pub fn train_cse(
    model: &SpanModel,
    init: ParameterStore,
    train: &[SpanExample],
    config: &CseTrainConfig,
    mut on_epoch: impl FnMut(&SpanEpochLog),
) -> Result<(ParameterStore, Vec<SpanEpochLog>)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("no span training examples".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    init.check_manifest(&model.manifest())?;
    let mut params = init;
    let mut adam = Adam::new(config.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zero_gradients();
            for &i in batch {
                let (loss, gr) = span_gradients(model, &params, &train[i])?;
                if !loss.is_finite() || !gr.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite span loss {loss} at epoch {epoch} on conversation {}",
                        train[i].conversation_id
                    )));
                }
                total += loss;
                grads.accumulate(&gr);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.update(&mut params, &grads);
        }
        let (exact_match, proportional_f1) = if config.log_metrics {
            let (em, f1) = span_metrics(model, &params, train)?;
            (Some(em), Some(f1))
        } else {
            (None, None)
        };
        let log = SpanEpochLog {
            epoch,
            loss: total / train.len() as f64,
            exact_match,
            proportional_f1,
        };
        log::info!("cse epoch {epoch}: loss {:.4} exact match {:?}", log.loss, log.exact_match);
        on_epoch(&log);
        logs.push(log);
    }
    Ok((params, logs))
}

/// Start-position mask helper for tests and diagnostics.
pub fn candidate_mask_matrix(input: &SpanInput) -> Array2<bool> {
    Array2::from_shape_fn((1, input.len()), |(_, j)| input.candidate.contains(&j))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticParams, Utterance};
    use crate::encoder::{EncoderConfig, Vocab};
    use crate::nn::gradcheck::check_gradients;
    use rand::Rng;

    fn conversation() -> Conversation {
        let mut c = Conversation {
            id: "s".into(),
            utterances: vec![
                Utterance::new(1, "A", "We made up last night!"),
                Utterance::new(2, "B", "Ok"),
                Utterance::new(3, "A", "I am so happy"),
            ],
            pairs: vec![],
        };
        c.utterances[2].emotion = Some(EmotionLabel::Joy);
        c
    }

    fn model(convs: &[Conversation], d: usize, seed: u64) -> SpanModel {
        let vocab = Vocab::build(convs);
        let mut ecfg = EncoderConfig::new(d, 1, 2, vocab.len());
        ecfg.n_segments = 3;
        ecfg.local_layers = 0;
        ecfg.seed = seed;
        let enc = TextEncoder::new(ecfg, vocab, "span.enc").unwrap();
        SpanModel::new(
            SpanModelConfig {
                dim: d,
                seed: seed + 1,
                ..Default::default()
            },
            enc,
        )
        .unwrap()
    }

    fn example(c: &Conversation) -> SpanExample {
        SpanExample {
            conversation_id: c.id.clone(),
            emotion_index: 3,
            cause_index: 1,
            emotion: EmotionLabel::Joy,
            input: SpanInput::build(c, 3, 1, 64).unwrap(),
            span: TokenSpan::new(1, 2),
        }
    }

    #[test]
    fn input_layout() {
        let c = conversation();
        let input = SpanInput::build(&c, 3, 1, 64).unwrap();
        assert_eq!(input.tokens[0], CLS);
        assert_eq!(&input.tokens[input.candidate.clone()], c.utterances[0].tokens.as_slice());
        assert_eq!(input.segments[input.candidate.start], SEGMENT_CANDIDATE);
        assert_eq!(*input.segments.last().unwrap(), SEGMENT_HISTORY);
        assert_eq!(input.tokens.len(), input.segments.len());
        let short = SpanInput::build(&c, 3, 1, 10).unwrap();
        assert_eq!(short.len(), 10);
        assert_eq!(short.candidate.len(), 6);
        assert!(SpanInput::build(&c, 3, 1, 8).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let c = conversation();
        let m = model(std::slice::from_ref(&c), 8, 1);
        let params = m.init_params();
        let ex = example(&c);
        let report = check_gradients(&params, 1e-4, |g| m.loss(g, &ex).unwrap());
        let worst = report.worst().unwrap();
        assert!(report.max_rel_error() < 1e-4, "{} rel err {}", worst.name, worst.rel_error);
    }

    #[test]
    fn end_loss_ignores_start_head() {
        let c = conversation();
        let m = model(std::slice::from_ref(&c), 8, 2);
        let params = m.init_params();
        let ex = example(&c);
        let mut g = Graph::new(&params);
        let fwd = m.forward(&mut g, &ex.input);
        let s = ex.input.candidate.start + ex.span.start;
        let (end, mask) = m.end_logits_given_start(&mut g, fwd.reps, &ex.input, s).unwrap();
        let loss = g.cross_entropy(end, Some(&mask), s + 1);
        let grads = g.backward(loss);
        assert!(grads.get("span.start.w").is_none_or(|m| m.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn zero_beta_is_pure_span_loss() {
        let c = conversation();
        let mut m = model(std::slice::from_ref(&c), 8, 3);
        let params = m.init_params();
        let ex = example(&c);
        let full = {
            let mut g = Graph::new(&params);
            let l = m.loss(&mut g, &ex).unwrap();
            g.scalar(l)
        };
        m.config.beta = 0.0;
        let mut g = Graph::new(&params);
        let pure = m.loss(&mut g, &ex).unwrap();
        let fwd = m.forward(&mut g, &ex.input);
        let emo = g.cross_entropy(fwd.emotion_logits, None, EmotionLabel::Joy.code());
        assert!((full - g.scalar(pure) - 0.5 * g.scalar(emo)).abs() < 1e-12);
    }

    #[test]
    fn single_token_candidate() {
        let c = conversation();
        let m = model(std::slice::from_ref(&c), 8, 4);
        let params = m.init_params();
        let input = SpanInput::build(&c, 3, 2, 64).unwrap();
        assert_eq!(input.candidate.len(), 1);
        let d = m.brute_force_span(&params, &input).unwrap();
        assert_eq!((d.start, d.end), (0, 0));
        let starts = m.start_scores(&params, &input);
        let finite: Vec<_> = starts.iter().filter(|v| v.is_finite()).collect();
        assert_eq!(finite.len(), 1);
    }

    #[test]
    fn start_at_last_token_forces_end() {
        let c = conversation();
        let m = model(std::slice::from_ref(&c), 8, 5);
        let params = m.init_params();
        let input = SpanInput::build(&c, 3, 1, 64).unwrap();
        let mut g = Graph::new(&params);
        let fwd = m.forward(&mut g, &input);
        let last = input.candidate.end - 1;
        let (_, mask) = m.end_logits_given_start(&mut g, fwd.reps, &input, last).unwrap();
        assert_eq!(mask.iter().filter(|v| **v).count(), 1);
        assert!(mask[last]);
        assert!(m.end_logits_given_start(&mut g, fwd.reps, &input, 0).is_err());
    }

    #[test]
    fn topk_matches_exhaustive_on_random_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..300 {
            let n = rng.random_range(1..12);
            let lo = rng.random_range(0..n);
            let hi = rng.random_range(lo..n) + 1;
            let starts: Vec<f64> = (0..n)
                .map(|i| if (lo..hi).contains(&i) { (rng.random_range(-3..3)) as f64 } else { f64::NEG_INFINITY })
                .collect();
            let table: Vec<Vec<f64>> = (0..n)
                .map(|s| {
                    (0..n)
                        .map(|e| if e >= s && e < hi { (rng.random_range(-3..3)) as f64 } else { f64::NEG_INFINITY })
                        .collect()
                })
                .collect();
            let full = decode_exhaustive(&starts, |s| table[s].clone());
            assert_eq!(decode_topk(&starts, |s| table[s].clone(), hi - lo), full);
            let shifted: Vec<f64> = starts.iter().map(|v| v + 2.5).collect();
            let moved = decode_exhaustive(&shifted, |s| table[s].clone()).unwrap();
            let base = full.unwrap();
            assert_eq!((moved.0, moved.1), (base.0, base.1));
        }
    }

    #[test]
    fn learns_planted_spans() {
        let convs = generate_synthetic(31, 30, &SyntheticParams::default()).unwrap();
        let m = model(&convs, 16, 6);
        let train = span_examples(&convs, 256).unwrap();
        let cfg = CseTrainConfig {
            epochs: 8,
            batch_size: 8,
            optimizer: AdamConfig {
                lr: 5e-3,
                ..Default::default()
            },
            log_metrics: false,
            seed: 0,
        };
        let (params, logs) = train_cse(&m, m.init_params(), &train, &cfg, |_| {}).unwrap();
        assert!(logs.last().unwrap().loss < logs[0].loss);
        let (em, _) = span_metrics(&m, &params, &train).unwrap();
        assert!(em > 0.5, "exact match {em}");
    }
}
