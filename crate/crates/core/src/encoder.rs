//! Contextual utterance encoder.
//!
//! Tokens of `U_1..U_upto` are concatenated, each utterance prefixed by a
//! sentinel (`[CLS]`, or `[TGT]` for the last one), and run through a small
//! pre-norm transformer. Row `i` of the result is the final hidden state at
//! utterance `i`'s sentinel.
//!
//! Every token also carries a learned embedding of its utterance's distance
//! from the last utterance, and the first `local_layers` blocks only attend
//! within an utterance, so sentinels summarise their own tokens before the
//! global blocks mix context.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Conversation;
use crate::error::{Error, Result};
use crate::nn::layers::{
    feed_forward, init_attention, init_feed_forward, init_layer_norm, layer_norm, multi_head_attention,
};
use crate::nn::{Gradients, Graph, Manifest, Matrix, ParameterStore, Var};

pub const CLS: &str = "[CLS]";
pub const TGT: &str = "[TGT]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";
const SPECIALS: [&str; 4] = [CLS, TGT, SEP, UNK];

/// Lower-cased word vocabulary with the four special tokens at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        Self::from_list(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut words: Vec<String> = tokens.into_iter().map(|t| t.as_ref().to_lowercase()).collect();
        words.sort();
        words.dedup();
        list.extend(words.into_iter().filter(|w| !SPECIALS.contains(&w.as_str())));
        Self::from_list(list)
    }

    /// Every token of every utterance in `conversations`.
    pub fn build(conversations: &[Conversation]) -> Self {
        Self::from_tokens(
            conversations
                .iter()
                .flat_map(|c| c.utterances.iter())
                .flat_map(|u| u.tokens.iter()),
        )
    }

    fn from_list(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let lower = token.to_lowercase();
        self.index.get(&lower).copied().unwrap_or(3)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub vocab_size: usize,
    pub max_tokens: usize,
    /// Utterance distances beyond this share one embedding.
    pub max_distance: usize,
    /// Number of leading blocks restricted to within-group attention.
    pub local_layers: usize,
    /// Number of segment embeddings; 0 disables them.
    pub n_segments: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(dim: usize, n_layers: usize, n_heads: usize, vocab_size: usize) -> Self {
        Self {
            dim,
            n_layers,
            n_heads,
            vocab_size,
            max_tokens: 512,
            max_distance: 32,
            local_layers: 1,
            n_segments: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("vocab_size", self.vocab_size),
            ("max_distance", self.max_distance),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "encoder dim {} is not divisible by {} heads",
                self.dim, self.n_heads
            )));
        }
        if self.max_tokens < 2 {
            return Err(Error::Config("encoder max_tokens must be at least 2".into()));
        }
        if self.local_layers > self.n_layers {
            return Err(Error::Config("encoder local_layers exceeds n_layers".into()));
        }
        Ok(())
    }
}

/// Token ids plus per-token group (utterance) ids and optional segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Distance of each token's group from the last group, used for the
    /// distance embedding and the local attention mask.
    pub groups: Vec<usize>,
    pub segments: Option<Vec<usize>>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Encoder input for `U_1..U_upto` after truncation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationInput {
    pub sequence: TokenSequence,
    /// Sentinel position per utterance; `None` for dropped utterances.
    pub sentinels: Vec<Option<usize>>,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMatrix {
    /// `upto × d`, row `i` is utterance `i + 1`.
    pub h: Matrix,
    pub valid_mask: Vec<bool>,
    /// Number of oldest utterances removed to respect `max_tokens`.
    pub dropped: usize,
}

fn sinusoid(n: usize, d: usize) -> Matrix {
    Array2::from_shape_fn((n, d), |(p, i)| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = p as f64 / rate;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoder {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub prefix: String,
}

impl TextEncoder {
    pub fn new(config: EncoderConfig, vocab: Vocab, prefix: impl Into<String>) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Config(format!(
                "encoder vocab_size {} does not match vocabulary of {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self {
            config,
            vocab,
            prefix: prefix.into(),
        })
    }

    fn name(&self, part: &str) -> String {
        format!("{}.{part}", self.prefix)
    }

    pub fn init_params(&self, store: &mut ParameterStore) {
        let c = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        store.init_normal(&self.name("tok_emb"), (c.vocab_size, c.dim), 1.0, &mut rng);
        store.init_normal(&self.name("dist_emb"), (c.max_distance + 1, c.dim), 0.5, &mut rng);
        if c.n_segments > 0 {
            store.init_normal(&self.name("seg_emb"), (c.n_segments, c.dim), 0.5, &mut rng);
        }
        for l in 0..c.n_layers {
            init_layer_norm(store, &self.name(&format!("l{l}.ln1")), c.dim);
            init_attention(store, &self.name(&format!("l{l}.att")), c.dim, c.dim, c.dim, &mut rng);
            init_layer_norm(store, &self.name(&format!("l{l}.ln2")), c.dim);
            init_feed_forward(store, &self.name(&format!("l{l}.ffn")), c.dim, 2 * c.dim, &mut rng);
        }
        init_layer_norm(store, &self.name("ln_f"), c.dim);
    }

    pub fn manifest(&self) -> Manifest {
        let mut store = ParameterStore::new();
        self.init_params(&mut store);
        store.manifest()
    }

    /// Builds the token sequence for `U_1..U_upto`, dropping the oldest
    /// utterances while the total exceeds `max_tokens`. A target that is too
    /// long on its own keeps its leading tokens.
    pub fn conversation_input(&self, conversation: &Conversation, upto: usize) -> Result<ConversationInput> {
        if upto == 0 || upto > conversation.len() {
            return Err(Error::InvalidInput(format!(
                "upto {upto} outside 1..={} for conversation {}",
                conversation.len(),
                conversation.id
            )));
        }
        let utts = &conversation.utterances[..upto];
        let cost = |u: &crate::corpus::Utterance| u.tokens.len() + 1;
        let mut first = 0;
        let mut total: usize = utts.iter().map(cost).sum();
        while total > self.config.max_tokens && first + 1 < upto {
            total -= cost(&utts[first]);
            first += 1;
        }
        let target_budget = self.config.max_tokens - 1;

        let mut ids = Vec::with_capacity(total.min(self.config.max_tokens));
        let mut groups = Vec::with_capacity(ids.capacity());
        let mut sentinels = vec![None; upto];
        for (i, u) in utts.iter().enumerate().skip(first) {
            let dist = upto - 1 - i;
            sentinels[i] = Some(ids.len());
            ids.push(self.vocab.id(if dist == 0 { TGT } else { CLS }));
            groups.push(dist);
            let take = if dist == 0 { u.tokens.len().min(target_budget) } else { u.tokens.len() };
            for t in &u.tokens[..take] {
                ids.push(self.vocab.id(t));
                groups.push(dist);
            }
        }
        if first > 0 || ids.len() < total {
            log::warn!(
                "conversation {}: input of {total} tokens exceeds max_tokens {}; dropped {first} oldest utterance(s)",
                conversation.id,
                self.config.max_tokens
            );
        }
        Ok(ConversationInput {
            sequence: TokenSequence {
                ids,
                groups,
                segments: None,
            },
            sentinels,
            dropped: first,
        })
    }

    /// Hidden states `n × d` for every token of `seq`.
    pub fn forward(&self, g: &mut Graph, seq: &TokenSequence) -> Var {
        let c = &self.config;
        let n = seq.len();
        assert!(n > 0, "empty token sequence");
        let tok = g.param(&self.name("tok_emb"));
        let ids: Vec<Option<usize>> = seq.ids.iter().map(|&i| Some(i)).collect();
        let mut x = g.gather_rows(tok, &ids);
        let pos = g.constant(sinusoid(n, c.dim));
        x = g.add(x, pos);
        let dist = g.param(&self.name("dist_emb"));
        let rows: Vec<Option<usize>> = seq.groups.iter().map(|&d| Some(d.min(c.max_distance))).collect();
        let de = g.gather_rows(dist, &rows);
        x = g.add(x, de);
        if let Some(segments) = &seq.segments {
            let seg = g.param(&self.name("seg_emb"));
            let rows: Vec<Option<usize>> = segments.iter().map(|&s| Some(s)).collect();
            let se = g.gather_rows(seg, &rows);
            x = g.add(x, se);
        }
        let local = Array2::from_shape_fn((n, n), |(i, j)| seq.groups[i] == seq.groups[j]);
        for l in 0..c.n_layers {
            let mask = (l < c.local_layers).then_some(&local);
            let h = layer_norm(g, x, &self.name(&format!("l{l}.ln1")));
            let a = multi_head_attention(g, h, h, &self.name(&format!("l{l}.att")), c.n_heads, mask).output;
            x = g.add(x, a);
            let h = layer_norm(g, x, &self.name(&format!("l{l}.ln2")));
            let f = feed_forward(g, h, &self.name(&format!("l{l}.ffn")));
            x = g.add(x, f);
        }
        layer_norm(g, x, &self.name("ln_f"))
    }

    /// Sentinel rows `upto × d` inside a graph; dropped utterances are zero
    /// rows that carry no gradient.
    pub fn encode_graph(&self, g: &mut Graph, conversation: &Conversation, upto: usize) -> Result<(Var, Vec<bool>)> {
        let input = self.conversation_input(conversation, upto)?;
        let hidden = self.forward(g, &input.sequence);
        let h = g.gather_rows(hidden, &input.sentinels);
        Ok((h, input.sentinels.iter().map(Option::is_some).collect()))
    }

    pub fn encode_conversation(
        &self,
        conversation: &Conversation,
        upto: usize,
        params: &ParameterStore,
    ) -> Result<UtteranceMatrix> {
        let input = self.conversation_input(conversation, upto)?;
        let mut g = Graph::new(params);
        let hidden = self.forward(&mut g, &input.sequence);
        let h = g.gather_rows(hidden, &input.sentinels);
        Ok(UtteranceMatrix {
            h: g.value(h).clone(),
            valid_mask: input.sentinels.iter().map(Option::is_some).collect(),
            dropped: input.dropped,
        })
    }
}

/// Gradients of `Σ_b ⟨upstream_b, H_b⟩` where `H_b` encodes `batch[b] =
/// (conversation, upto)`: the vector-Jacobian product of the encoder.
pub fn encoder_gradients(
    encoder: &TextEncoder,
    params: &ParameterStore,
    batch: &[(&Conversation, usize)],
    upstream: &[Matrix],
) -> Result<Gradients> {
    if batch.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} inputs but {} upstream gradients",
            batch.len(),
            upstream.len()
        )));
    }
    let mut total = params.zero_gradients();
    for ((conv, upto), seed) in batch.iter().zip(upstream) {
        let mut g = Graph::new(params);
        let (h, _) = encoder.encode_graph(&mut g, conv, *upto)?;
        if g.shape(h) != seed.dim() {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} does not match encoder output {:?}",
                seed.dim(),
                g.shape(h)
            )));
        }
        total.accumulate(&g.backward_with(h, seed.clone()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticParams, Utterance};
    use crate::nn::gradcheck::check_gradients;

    fn conversation(texts: &[&str]) -> Conversation {
        Conversation {
            id: "enc".into(),
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance::new(i + 1, if i % 2 == 0 { "A" } else { "B" }, *t))
                .collect(),
            pairs: vec![],
        }
    }

    fn setup(texts: &[&str], dim: usize, heads: usize) -> (Conversation, TextEncoder, ParameterStore) {
        let c = conversation(texts);
        let vocab = Vocab::build(std::slice::from_ref(&c));
        let mut cfg = EncoderConfig::new(dim, 2, heads, vocab.len());
        cfg.seed = 7;
        let enc = TextEncoder::new(cfg, vocab, "enc").unwrap();
        let mut store = ParameterStore::new();
        enc.init_params(&mut store);
        (c, enc, store)
    }

    const TEXTS: [&str; 4] = ["Hi there !", "We won the lottery .", "No way", "Really ?"];

    #[test]
    fn vocab_specials_and_unknowns() {
        let v = Vocab::from_tokens(["Hello", "hello", "world"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id(CLS), 0);
        assert_eq!(v.id("HELLO"), v.id("hello"));
        assert_eq!(v.id("zebra"), v.id(UNK));
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn shapes_and_finiteness() {
        let (c, enc, store) = setup(&TEXTS, 16, 4);
        let one = enc.encode_conversation(&c, 1, &store).unwrap();
        assert_eq!(one.h.dim(), (1, 16));
        assert!(one.h.iter().all(|v| v.is_finite()));
        let three = enc.encode_conversation(&c, 3, &store).unwrap();
        assert_eq!(three.h.dim(), (3, 16));
        assert_eq!(three.valid_mask, vec![true; 3]);
    }

    #[test]
    fn output_ignores_later_utterances() {
        let (c, enc, store) = setup(&TEXTS, 16, 4);
        let mut changed = c.clone();
        changed.utterances[3] = Utterance::new(4, "B", "Hi Hi Hi");
        let a = enc.encode_conversation(&c, 3, &store).unwrap();
        let b = enc.encode_conversation(&changed, 3, &store).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn permuting_history_changes_output() {
        let (c, enc, store) = setup(&TEXTS, 16, 4);
        let mut swapped = c.clone();
        let (u1, u2) = (swapped.utterances[0].clone(), swapped.utterances[1].clone());
        swapped.utterances[0] = Utterance::new(1, u2.speaker, u2.text);
        swapped.utterances[1] = Utterance::new(2, u1.speaker, u1.text);
        let a = enc.encode_conversation(&c, 3, &store).unwrap();
        let b = enc.encode_conversation(&swapped, 3, &store).unwrap();
        let diff = (&a.h.row(2) - &b.h.row(2)).mapv(f64::abs).sum();
        assert!(diff > 1e-6, "target row unchanged after permuting history");
    }

    #[test]
    fn eval_is_bitwise_deterministic() {
        let (c, enc, store) = setup(&TEXTS, 16, 4);
        let a = enc.encode_conversation(&c, 4, &store).unwrap();
        let b = enc.encode_conversation(&c, 4, &store).unwrap();
        let bits = |m: &Matrix| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.h), bits(&b.h));
    }

    #[test]
    fn truncation_drops_oldest_and_masks_rows() {
        let (c, mut enc, store) = setup(&TEXTS, 16, 4);
        // Utterance costs are 4, 6, 3, 3 including sentinels.
        enc.config.max_tokens = 7;
        let out = enc.encode_conversation(&c, 4, &store).unwrap();
        assert_eq!(out.valid_mask, vec![false, false, true, true]);
        assert_eq!(out.dropped, 2);
        assert!(out.h.row(0).iter().chain(out.h.row(1).iter()).all(|v| *v == 0.0));
        assert!(out.h.row(3).iter().any(|v| *v != 0.0));

        enc.config.max_tokens = 2;
        let out = enc.encode_conversation(&c, 2, &store).unwrap();
        assert_eq!(out.valid_mask, vec![false, true]);
        let input = enc.conversation_input(&c, 2).unwrap();
        assert_eq!(input.sequence.len(), 2);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (c, enc, store) = setup(&TEXTS, 8, 2);
        let weights = Array2::from_shape_fn((4, 8), |(i, j)| ((i * 8 + j) as f64 * 0.37).sin());
        let report = check_gradients(&store, 1e-4, |g| {
            let (h, _) = enc.encode_graph(g, &c, 4).unwrap();
            let w = g.constant(weights.clone());
            let prod = g.mul(h, w);
            g.sum_all(prod)
        });
        let worst = report.worst().unwrap();
        assert!(report.max_rel_error() < 1e-4, "{} rel err {}", worst.name, worst.rel_error);
        let grads = encoder_gradients(&enc, &store, &[(&c, 4)], &[weights]).unwrap();
        assert_eq!(grads.get("enc.tok_emb").unwrap().dim(), store.get("enc.tok_emb").unwrap().dim());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let (c, enc, store) = setup(&TEXTS, 8, 2);
        let grads = encoder_gradients(&enc, &store, &[(&c, 3)], &[Matrix::zeros((3, 8))]).unwrap();
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn masked_rows_carry_no_gradient() {
        let (c, mut enc, store) = setup(&TEXTS, 8, 2);
        enc.config.max_tokens = 7;
        // Row 0 is dropped, so perturbing its upstream gradient changes nothing.
        let base = Array2::from_elem((4, 8), 0.3);
        let mut perturbed = base.clone();
        perturbed.row_mut(0).fill(5.0);
        let a = encoder_gradients(&enc, &store, &[(&c, 4)], &[base]).unwrap();
        let b = encoder_gradients(&enc, &store, &[(&c, 4)], &[perturbed]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encodes_synthetic_corpus() {
        let convs = generate_synthetic(2, 5, &SyntheticParams::default()).unwrap();
        let vocab = Vocab::build(&convs);
        let enc = TextEncoder::new(EncoderConfig::new(16, 1, 2, vocab.len()), vocab, "e").unwrap();
        let mut store = ParameterStore::new();
        enc.init_params(&mut store);
        assert!(store.check_manifest(&enc.manifest()).is_ok());
        for c in &convs {
            let out = enc.encode_conversation(c, c.len(), &store).unwrap();
            assert_eq!(out.h.nrows(), c.len());
            assert!(out.h.iter().all(|v| v.is_finite()));
        }
    }
}
