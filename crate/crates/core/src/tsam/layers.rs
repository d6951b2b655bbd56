//! Graph-level building blocks of the two-stream attention model.

use ndarray::Array2;
use rand::Rng;

use super::speaker::SpeakerGraph;
use crate::error::{Error, Result};
use crate::nn::layers::{init_attention, init_linear, linear, multi_head_attention, AttentionOutput};
use crate::nn::{Graph, Matrix, ParameterStore, Var};
use crate::taxonomy::EmotionLabel;

/// Rows of the emotion embedding table for each label.
pub fn embed_emotions(g: &mut Graph, table: Var, labels: &[EmotionLabel]) -> Var {
    let rows: Vec<Option<usize>> = labels.iter().map(|l| Some(l.code())).collect();
    g.gather_rows(table, &rows)
}

/// Emotion attention: queries from `h_u`, keys and values from `memory`.
pub fn emotion_attention(g: &mut Graph, h_u: Var, memory: Var, prefix: &str, n_heads: usize) -> AttentionOutput {
    multi_head_attention(g, h_u, memory, prefix, n_heads, None)
}

pub fn init_speaker_attention<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, rng: &mut R) {
    for r in ["intra", "inter"] {
        store.init_xavier(&format!("{prefix}.{r}.w"), (d, d), rng);
        store.init_xavier(&format!("{prefix}.{r}.a1"), (d, 1), rng);
        store.init_xavier(&format!("{prefix}.{r}.a2"), (d, 1), rng);
    }
}

pub struct SpeakerAttentionOutput {
    pub output: Var,
    pub intra_weights: Var,
    pub inter_weights: Var,
}

/// Relational graph attention over intra/inter speaker edges. For relation
/// `r`, `z = h·W_r` and `e_ij = ReLU(z_i·a1 + z_j·a2)`; weights are
/// normalised over each node's `r`-neighbourhood and the messages `α_ij z_j`
/// are summed over both relations. Nodes without neighbours get zero rows.
pub fn speaker_attention(g: &mut Graph, h: Var, graph: &SpeakerGraph, prefix: &str) -> SpeakerAttentionOutput {
    let mut outputs = Vec::with_capacity(2);
    let mut weights = Vec::with_capacity(2);
    for (r, mask) in [("intra", &graph.intra), ("inter", &graph.inter)] {
        let w = g.param(&format!("{prefix}.{r}.w"));
        let a1 = g.param(&format!("{prefix}.{r}.a1"));
        let a2 = g.param(&format!("{prefix}.{r}.a2"));
        let z = g.matmul(h, w);
        let s1 = g.matmul(z, a1);
        let s2 = g.matmul(z, a2);
        let s2t = g.transpose(s2);
        let e = g.outer_add(s1, s2t);
        let e = g.relu(e);
        let alpha = g.masked_softmax_rows(e, mask);
        weights.push(alpha);
        outputs.push(g.matmul(alpha, z));
    }
    SpeakerAttentionOutput {
        output: g.add(outputs[0], outputs[1]),
        intra_weights: weights[0],
        inter_weights: weights[1],
    }
}

pub fn init_interaction<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, rng: &mut R) {
    store.init_xavier(&format!("{prefix}.w1"), (d, d), rng);
    store.init_xavier(&format!("{prefix}.w2"), (d, d), rng);
}

pub struct InteractionOutput {
    pub emotion: Var,
    pub speaker: Var,
    pub emotion_weights: Var,
    pub speaker_weights: Var,
}

/// Mutual bi-affine exchange between the streams with columns of unknown
/// speakers masked out: `Ḣe = softmax(He W1 Hsᵀ) Hs`, `Ḣs = softmax(Hs W2 Heᵀ) He`.
pub fn masked_interaction(g: &mut Graph, h_e: Var, h_s: Var, known: &[bool], prefix: &str) -> InteractionOutput {
    let t = known.len();
    let mask = Array2::from_shape_fn((t, t), |(_, j)| known[j]);
    let w1 = g.param(&format!("{prefix}.w1"));
    let w2 = g.param(&format!("{prefix}.w2"));

    let ew = g.matmul(h_e, w1);
    let scores_e = g.matmul_t(ew, h_s);
    let att_e = g.masked_softmax_rows(scores_e, &mask);
    let emotion = g.matmul(att_e, h_s);

    let sw = g.matmul(h_s, w2);
    let scores_s = g.matmul_t(sw, h_e);
    let att_s = g.masked_softmax_rows(scores_s, &mask);
    let speaker = g.matmul(att_s, h_e);

    InteractionOutput {
        emotion,
        speaker,
        emotion_weights: att_e,
        speaker_weights: att_s,
    }
}

pub fn init_predictor<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, hidden: usize, rng: &mut R) {
    init_linear(store, &format!("{prefix}.fc1"), 2 * d, hidden, rng);
    init_linear(store, &format!("{prefix}.fc2"), hidden, 1, rng);
}

/// Cause logits `t × 1` from `[speaker ‖ emotion]` rows.
pub fn cause_logits(g: &mut Graph, speaker: Var, emotion: Var, prefix: &str) -> Var {
    let x = g.concat_cols(&[speaker, emotion]);
    let h = linear(g, x, &format!("{prefix}.fc1"));
    let h = g.relu(h);
    linear(g, h, &format!("{prefix}.fc2"))
}

/// Default smoothing constant of the Dice loss.
pub const DICE_EPS: f64 = 1.0;

/// Soft multi-class Dice loss, averaged over classes present in `gold`.
pub fn dice_loss(probabilities: &Matrix, gold: &Matrix, eps: f64) -> Result<f64> {
    if probabilities.nrows() == 0 {
        return Err(Error::InvalidInput("dice loss of an empty batch".into()));
    }
    if probabilities.dim() != gold.dim() {
        return Err(Error::Shape(format!(
            "dice probabilities {:?} vs gold {:?}",
            probabilities.dim(),
            gold.dim()
        )));
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..gold.ncols() {
        let p = probabilities.column(c);
        let y = gold.column(c);
        if y.sum() <= 0.0 {
            continue;
        }
        let inter: f64 = p.iter().zip(y.iter()).map(|(a, b)| a * b).sum();
        let denom = p.dot(&p) + y.dot(&y) + eps;
        total += 1.0 - (2.0 * inter + eps) / denom;
        present += 1;
    }
    Ok(if present == 0 { 0.0 } else { total / present as f64 })
}

/// Graph version of [`dice_loss`]; `gold` must contain at least one row.
pub fn dice_loss_graph(g: &mut Graph, probabilities: Var, gold: &Matrix, eps: f64) -> Var {
    let c = gold.ncols();
    let present = Array2::from_shape_fn((1, c), |(_, k)| f64::from(gold.column(k).sum() > 0.0));
    let n_present = present.sum();
    let gold_sq = Array2::from_shape_fn((1, c), |(_, k)| gold.column(k).dot(&gold.column(k)));

    let pg = g.mul_const(probabilities, gold.clone());
    let inter = g.sum_rows(pg);
    let num = g.scale(inter, 2.0);
    let num = g.add_scalar(num, eps);
    let pp = g.mul(probabilities, probabilities);
    let pp = g.sum_rows(pp);
    let gs = g.constant(gold_sq);
    let den = g.add(pp, gs);
    let den = g.add_scalar(den, eps);
    let ratio = g.div(num, den);
    let kept = g.mul_const(ratio, present);
    let s = g.sum_all(kept);
    if n_present == 0.0 {
        return g.scale(s, 0.0);
    }
    let s = g.scale(s, -1.0 / n_present);
    g.add_scalar(s, 1.0)
}

/// Registers EAN, SAN and MIN parameters for one layer.
pub fn init_tsam_layer<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, rng: &mut R) {
    init_attention(store, &format!("{prefix}.ean"), d, d, d, rng);
    init_speaker_attention(store, &format!("{prefix}.san"), d, rng);
    init_interaction(store, &format!("{prefix}.min"), d, rng);
}
