//! Two-stream attention model for causal emotion entailment.
//!
//! For a target utterance `t`, the conversation up to `t` is encoded into
//! `H_u`. Each layer runs an emotion stream (attention from the utterance
//! rows onto per-utterance emotion memories) and a speaker stream
//! (relational attention over intra/inter speaker edges), exchanges them
//! through the masked interaction network and adds the results back onto
//! the layer input:
//!
//! ```text
//! He = EAN(U, M)   Hs = SAN(U)   (Ḣe, Ḣs) = MIN(He, Hs)
//! E = U + Ḣe       S = U + Ḣs    next layer: U ← S, M ← E
//! ```
//!
//! The first memory is the embedding of each utterance's stage-1 label.
//! Every candidate `j ≤ t` is scored by `sigmoid(fc([S_j ‖ E_j]))`.

mod layers;
mod speaker;

pub use layers::{
    cause_logits, dice_loss, dice_loss_graph, embed_emotions, emotion_attention, masked_interaction,
    speaker_attention, InteractionOutput, SpeakerAttentionOutput, DICE_EPS,
};
pub use speaker::{build_speaker_graph, SpeakerGraph};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Conversation, EmotionCausePair};
use crate::encoder::TextEncoder;
use crate::error::{Error, Result};
use crate::evaluation::{cee_pos_f1, PredictionRecord};
use crate::nn::layers::{init_linear, linear};
use crate::nn::{sigmoid, Adam, AdamConfig, Gradients, Graph, Manifest, Matrix, ParameterStore, Var};
use crate::taxonomy::EmotionLabel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsamConfig {
    pub layers: usize,
    pub n_heads: usize,
    pub dim: usize,
    pub n_emotions: usize,
    /// Width of the predictor's hidden layer.
    pub hidden: usize,
    /// Pairs with `p ≥ threshold` are causes.
    pub threshold: f64,
    pub lambda_aux: f64,
    /// Width of per-utterance modality features appended to `H_u`; 0 for none.
    pub modality_dim: usize,
    pub seed: u64,
}

impl Default for TsamConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            n_heads: 4,
            dim: 64,
            n_emotions: EmotionLabel::COUNT,
            hidden: 64,
            threshold: 0.5,
            lambda_aux: 0.2,
            modality_dim: 0,
            seed: 0,
        }
    }
}

impl TsamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.n_heads == 0 || self.dim == 0 || self.hidden == 0 {
            return Err(Error::Config("tsam layers, heads, dim and hidden must be positive".into()));
        }
        if !self.dim.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "tsam dim {} is not divisible by {} heads",
                self.dim, self.n_heads
            )));
        }
        if self.n_emotions != EmotionLabel::COUNT {
            return Err(Error::Config(format!("tsam n_emotions must be {}", EmotionLabel::COUNT)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("pair threshold {} outside (0, 1)", self.threshold)));
        }
        if !(self.lambda_aux >= 0.0 && self.lambda_aux.is_finite()) {
            return Err(Error::Config("lambda_aux must be a non-negative number".into()));
        }
        Ok(())
    }
}

/// A conversation with the stage-1 labels the model conditions on.
#[derive(Debug, Clone, PartialEq)]
pub struct CeeExample {
    pub conversation: Conversation,
    pub labels: Vec<EmotionLabel>,
    /// Optional `len × modality_dim` per-utterance features.
    pub features: Option<Matrix>,
}

impl CeeExample {
    /// Uses the gold emotions; missing ones count as neutral.
    pub fn gold(conversation: Conversation) -> Self {
        let labels = conversation.gold_emotions();
        Self {
            conversation,
            labels,
            features: None,
        }
    }

    pub fn with_labels(conversation: Conversation, labels: Vec<EmotionLabel>) -> Result<Self> {
        if labels.len() != conversation.len() {
            return Err(Error::validation(
                &conversation.id,
                format!("{} labels for {} utterances", labels.len(), conversation.len()),
            ));
        }
        Ok(Self {
            conversation,
            labels,
            features: None,
        })
    }

    /// 1-based indices of utterances whose stage-1 label is not neutral.
    pub fn targets(&self) -> Vec<usize> {
        (1..=self.labels.len()).filter(|t| !self.labels[t - 1].is_neutral()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairPrediction {
    pub target_index: usize,
    pub candidate_index: usize,
    pub probability: f64,
    pub is_cause: bool,
}

/// Attention weights of one layer, kept for inspection.
pub struct LayerTrace {
    pub emotion_heads: Vec<Var>,
    pub intra: Var,
    pub inter: Var,
    pub interaction_emotion: Var,
    pub interaction_speaker: Var,
}

pub struct TsamForward {
    /// Utterance representations fed to the first layer, `t × d`.
    pub h_u: Var,
    /// Cause logits for candidates `1..=t`, `t × 1`.
    pub logits: Var,
    pub graph: SpeakerGraph,
    pub layers: Vec<LayerTrace>,
}

/// Model definition: hyper-parameters plus the utterance encoder. Parameters
/// live in a separate [`ParameterStore`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tsam {
    pub config: TsamConfig,
    pub encoder: TextEncoder,
}

const PREFIX: &str = "tsam";

impl Tsam {
    pub fn new(config: TsamConfig, encoder: TextEncoder) -> Result<Self> {
        config.validate()?;
        if encoder.config.dim != config.dim {
            return Err(Error::Config(format!(
                "encoder dim {} differs from tsam dim {}",
                encoder.config.dim, config.dim
            )));
        }
        Ok(Self { config, encoder })
    }

    pub fn init_params(&self) -> ParameterStore {
        let c = &self.config;
        let mut store = ParameterStore::new();
        self.encoder.init_params(&mut store);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        store.init_normal(&format!("{PREFIX}.emo_table"), (c.n_emotions, c.dim), 1.0, &mut rng);
        store.init_normal(&format!("{PREFIX}.target_mark"), (1, c.dim), 1.0, &mut rng);
        if c.modality_dim > 0 {
            init_linear(&mut store, &format!("{PREFIX}.in_proj"), c.dim + c.modality_dim, c.dim, &mut rng);
        }
        for l in 0..c.layers {
            layers::init_tsam_layer(&mut store, &format!("{PREFIX}.l{l}"), c.dim, &mut rng);
        }
        layers::init_predictor(&mut store, &format!("{PREFIX}.pred"), c.dim, c.hidden, &mut rng);
        init_linear(&mut store, &format!("{PREFIX}.aux"), c.dim, c.n_emotions, &mut rng);
        store
    }

    pub fn manifest(&self) -> Manifest {
        self.init_params().manifest()
    }

    /// Forward pass over `U_1..U_upto` conditioned on `labels[..upto]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        conversation: &Conversation,
        upto: usize,
        labels: &[EmotionLabel],
        features: Option<&Matrix>,
    ) -> Result<TsamForward> {
        let c = &self.config;
        if labels.len() < upto {
            return Err(Error::validation(
                &conversation.id,
                format!("{} stage-1 labels for target {upto}", labels.len()),
            ));
        }
        let (h_text, valid) = self.encoder.encode_graph(g, conversation, upto)?;
        let h_u = if c.modality_dim > 0 {
            let f = features.ok_or_else(|| {
                Error::validation(&conversation.id, "model expects modality features but none were given")
            })?;
            if f.nrows() < upto || f.ncols() != c.modality_dim {
                return Err(Error::Shape(format!(
                    "modality features {:?} for {upto} utterances of width {}",
                    f.dim(),
                    c.modality_dim
                )));
            }
            let fv = g.constant(f.slice(ndarray::s![..upto, ..]).to_owned());
            let cat = g.concat_cols(&[h_text, fv]);
            linear(g, cat, &format!("{PREFIX}.in_proj"))
        } else {
            h_text
        };

        let mut graph = build_speaker_graph(conversation, upto);
        for (k, ok) in valid.iter().enumerate() {
            if !ok {
                graph.known[k] = false;
                graph.intra.row_mut(k).fill(false);
                graph.intra.column_mut(k).fill(false);
                graph.inter.row_mut(k).fill(false);
                graph.inter.column_mut(k).fill(false);
            }
        }

        let table = g.param(&format!("{PREFIX}.emo_table"));
        let memory = embed_emotions(g, table, &labels[..upto]);
        // Tag the target's row so queries can single out its emotion.
        let mut onehot = Matrix::zeros((upto, 1));
        onehot[[upto - 1, 0]] = 1.0;
        let onehot = g.constant(onehot);
        let mark = g.param(&format!("{PREFIX}.target_mark"));
        let mark = g.matmul(onehot, mark);
        let mut memory = g.add(memory, mark);
        let mut u = h_u;
        let mut traces = Vec::with_capacity(c.layers);
        for l in 0..c.layers {
            let p = format!("{PREFIX}.l{l}");
            let ean = emotion_attention(g, u, memory, &format!("{p}.ean"), c.n_heads);
            let san = speaker_attention(g, u, &graph, &format!("{p}.san"));
            let min = masked_interaction(g, ean.output, san.output, &graph.known, &format!("{p}.min"));
            let e = g.add(u, min.emotion);
            let s = g.add(u, min.speaker);
            traces.push(LayerTrace {
                emotion_heads: ean.weights,
                intra: san.intra_weights,
                inter: san.inter_weights,
                interaction_emotion: min.emotion_weights,
                interaction_speaker: min.speaker_weights,
            });
            u = s;
            memory = e;
        }
        let logits = cause_logits(g, u, memory, &format!("{PREFIX}.pred"));
        Ok(TsamForward {
            h_u,
            logits,
            graph,
            layers: traces,
        })
    }

    /// Mean candidate BCE for target `t` plus `λ_aux` times the Dice loss of
    /// the emotion head on the rows with a gold emotion.
    pub fn target_loss(&self, g: &mut Graph, example: &CeeExample, t: usize) -> Result<Var> {
        let conv = &example.conversation;
        let fwd = self.forward(g, conv, t, &example.labels, example.features.as_ref())?;
        let targets = Array2::from_shape_fn((t, 1), |(j, _)| {
            f64::from(conv.pairs.iter().any(|p| p.emotion_index == t && p.cause_index == j + 1))
        });
        let bce = g.bce_with_logits(fwd.logits, targets);
        if self.config.lambda_aux == 0.0 {
            return Ok(bce);
        }
        let rows: Vec<usize> = (0..t).filter(|&j| conv.utterances[j].emotion.is_some()).collect();
        if rows.is_empty() {
            return Ok(bce);
        }
        let aux_logits = linear(g, fwd.h_u, &format!("{PREFIX}.aux"));
        let picked: Vec<Option<usize>> = rows.iter().map(|&j| Some(j)).collect();
        let aux_logits = g.gather_rows(aux_logits, &picked);
        let probs = g.softmax_rows(aux_logits);
        let gold = Array2::from_shape_fn((rows.len(), self.config.n_emotions), |(r, k)| {
            f64::from(conv.utterances[rows[r]].emotion.map(|e| e.code()) == Some(k))
        });
        let dice = dice_loss_graph(g, probs, &gold, DICE_EPS);
        let dice = g.scale(dice, self.config.lambda_aux);
        Ok(g.add(bce, dice))
    }

    /// Sum of [`Tsam::target_loss`] over all targets; `None` without targets.
    pub fn example_loss(&self, g: &mut Graph, example: &CeeExample) -> Result<Option<Var>> {
        let mut total: Option<Var> = None;
        for t in example.targets() {
            let l = self.target_loss(g, example, t)?;
            total = Some(match total {
                Some(acc) => g.add(acc, l),
                None => l,
            });
        }
        Ok(total)
    }

    /// Cause probabilities for every candidate `j ≤ t`.
    pub fn predict_causes(
        &self,
        params: &ParameterStore,
        example: &CeeExample,
        t: usize,
        threshold: f64,
    ) -> Result<Vec<PairPrediction>> {
        let mut g = Graph::new(params);
        let fwd = self.forward(&mut g, &example.conversation, t, &example.labels, example.features.as_ref())?;
        Ok(g.value(fwd.logits)
            .column(0)
            .iter()
            .enumerate()
            .map(|(j, &z)| {
                let p = sigmoid(z);
                PairPrediction {
                    target_index: t,
                    candidate_index: j + 1,
                    probability: p,
                    is_cause: p >= threshold,
                }
            })
            .collect())
    }

    /// Pairs `(t, label_t, j)` for every non-neutral target and every
    /// candidate with `p ≥ threshold`.
    pub fn infer_pairs(
        &self,
        params: &ParameterStore,
        example: &CeeExample,
        threshold: f64,
    ) -> Result<Vec<EmotionCausePair>> {
        let mut out = Vec::new();
        for t in example.targets() {
            for p in self.predict_causes(params, example, t, threshold)? {
                if p.is_cause {
                    out.push(EmotionCausePair {
                        emotion_index: t,
                        emotion: example.labels[t - 1],
                        cause_index: p.candidate_index,
                        span: None,
                    });
                }
            }
        }
        Ok(out)
    }

    /// Span-less prediction records for a whole dataset.
    pub fn predict_records(
        &self,
        params: &ParameterStore,
        examples: &[CeeExample],
        threshold: f64,
    ) -> Result<Vec<PredictionRecord>> {
        let mut out = Vec::new();
        for ex in examples {
            for p in self.infer_pairs(params, ex, threshold)? {
                out.push(PredictionRecord {
                    conversation: ex.conversation.id.clone(),
                    emotion_index: p.emotion_index,
                    cause_index: p.cause_index,
                    emotion: p.emotion,
                    span: None,
                    span_text: None,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeeTrainConfig {
    pub epochs: usize,
    /// Conversations per optimiser step.
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    /// Score train and dev pairs after every epoch.
    pub log_metrics: bool,
    pub seed: u64,
}

impl Default for CeeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            optimizer: AdamConfig::default(),
            log_metrics: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub pos_f1_train: Option<f64>,
    pub pos_f1_dev: Option<f64>,
}

fn gold_pair_records(examples: &[CeeExample]) -> Vec<PredictionRecord> {
    examples
        .iter()
        .flat_map(|ex| {
            ex.conversation.pairs.iter().map(|p| PredictionRecord {
                conversation: ex.conversation.id.clone(),
                emotion_index: p.emotion_index,
                cause_index: p.cause_index,
                emotion: p.emotion,
                span: None,
                span_text: None,
            })
        })
        .collect()
}

/// Positive F1 of the model's pairs on `examples` at the configured threshold.
pub fn pair_f1(model: &Tsam, params: &ParameterStore, examples: &[CeeExample]) -> Result<f64> {
    let pred = model.predict_records(params, examples, model.config.threshold)?;
    Ok(cee_pos_f1(&pred, &gold_pair_records(examples), true).pos_f1)
}

/// Gradients and loss of one example (zero without targets).
pub fn example_gradients(model: &Tsam, params: &ParameterStore, example: &CeeExample) -> Result<(f64, Gradients)> {
    let mut g = Graph::new(params);
    match model.example_loss(&mut g, example)? {
        Some(loss) => Ok((g.scalar(loss), g.backward(loss))),
        None => Ok((0.0, Gradients::default())),
    }
}

/// Trains the encoder and TSAM parameters jointly with Adam; `on_epoch` sees
/// each epoch's log as it is produced.
pub fn train_cee(
    model: &Tsam,
    init: ParameterStore,
    train: &[CeeExample],
    dev: &[CeeExample],
    config: &CeeTrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<(ParameterStore, Vec<EpochLog>)> {
    if train.is_empty() {
        return Err(Error::InvalidInput("no training conversations".into()));
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
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zero_gradients();
            for &i in batch {
                let (loss, gr) = example_gradients(model, &params, &train[i])?;
                if !loss.is_finite() || !gr.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss {loss} at epoch {epoch} on conversation {}",
                        train[i].conversation.id
                    )));
                }
                epoch_loss += loss;
                grads.accumulate(&gr);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.update(&mut params, &grads);
        }
        let (pos_f1_train, pos_f1_dev) = if config.log_metrics {
            let tr = pair_f1(model, &params, train)?;
            let dv = if dev.is_empty() { None } else { Some(pair_f1(model, &params, dev)?) };
            (Some(tr), dv)
        } else {
            (None, None)
        };
        let log = EpochLog {
            epoch,
            loss: epoch_loss / train.len() as f64,
            pos_f1_train,
            pos_f1_dev,
        };
        log::info!(
            "cee epoch {epoch}: loss {:.4} train pos-f1 {:?} dev pos-f1 {:?}",
            log.loss,
            log.pos_f1_train,
            log.pos_f1_dev
        );
        on_epoch(&log);
        logs.push(log);
    }
    Ok((params, logs))
}
