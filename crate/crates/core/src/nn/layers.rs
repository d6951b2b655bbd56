//! Parameterised building blocks shared by the encoder, TSAM and span models.

use ndarray::Array2;
use rand::Rng;

use super::graph::{Graph, Var};
use super::params::ParameterStore;

pub fn init_linear<R: Rng>(store: &mut ParameterStore, prefix: &str, d_in: usize, d_out: usize, rng: &mut R) {
    store.init_xavier(&format!("{prefix}.w"), (d_in, d_out), rng);
    store.init_zeros(&format!("{prefix}.b"), (1, d_out));
}

/// `x · W + b`
pub fn linear(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let w = g.param(&format!("{prefix}.w"));
    let b = g.param(&format!("{prefix}.b"));
    let xw = g.matmul(x, w);
    g.add_row(xw, b)
}

pub fn init_layer_norm(store: &mut ParameterStore, prefix: &str, d: usize) {
    store.init_ones(&format!("{prefix}.gain"), (1, d));
    store.init_zeros(&format!("{prefix}.bias"), (1, d));
}

pub fn layer_norm(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let gain = g.param(&format!("{prefix}.gain"));
    let bias = g.param(&format!("{prefix}.bias"));
    let n = g.layer_norm(x, 1e-5);
    let scaled = g.mul_row(n, gain);
    g.add_row(scaled, bias)
}

/// Projections `wq: d_query×d`, `wk, wv: d_kv×d`, `wo: d×d`.
pub fn init_attention<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    d_query: usize,
    d_kv: usize,
    d: usize,
    rng: &mut R,
) {
    store.init_xavier(&format!("{prefix}.wq"), (d_query, d), rng);
    store.init_xavier(&format!("{prefix}.wk"), (d_kv, d), rng);
    store.init_xavier(&format!("{prefix}.wv"), (d_kv, d), rng);
    store.init_xavier(&format!("{prefix}.wo"), (d, d), rng);
}

pub struct AttentionOutput {
    pub output: Var,
    /// Per-head attention weights, each `n_query × n_kv`.
    pub weights: Vec<Var>,
}

/// Scaled dot-product multi-head attention with scaling `1/sqrt(d/h)`.
/// `mask[i][j] == false` forbids query `i` from attending to key `j`.
pub fn multi_head_attention(
    g: &mut Graph,
    query: Var,
    kv: Var,
    prefix: &str,
    n_heads: usize,
    mask: Option<&Array2<bool>>,
) -> AttentionOutput {
    let wq = g.param(&format!("{prefix}.wq"));
    let wk = g.param(&format!("{prefix}.wk"));
    let wv = g.param(&format!("{prefix}.wv"));
    let wo = g.param(&format!("{prefix}.wo"));
    let q = g.matmul(query, wq);
    let k = g.matmul(kv, wk);
    let v = g.matmul(kv, wv);
    let d = g.shape(q).1;
    assert_eq!(d % n_heads, 0, "model width must divide into heads");
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, (h + 1) * dh);
        let kh = g.slice_cols(k, h * dh, (h + 1) * dh);
        let vh = g.slice_cols(v, h * dh, (h + 1) * dh);
        let scores = g.matmul_t(qh, kh);
        let scores = g.scale(scores, scale);
        let attn = match mask {
            Some(m) => g.masked_softmax_rows(scores, m),
            None => g.softmax_rows(scores),
        };
        weights.push(attn);
        heads.push(g.matmul(attn, vh));
    }
    let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
    let output = g.matmul(cat, wo);
    AttentionOutput { output, weights }
}

/// Two-layer GELU feed-forward block.
pub fn init_feed_forward<R: Rng>(store: &mut ParameterStore, prefix: &str, d: usize, hidden: usize, rng: &mut R) {
    init_linear(store, &format!("{prefix}.fc1"), d, hidden, rng);
    init_linear(store, &format!("{prefix}.fc2"), hidden, d, rng);
}

pub fn feed_forward(g: &mut Graph, x: Var, prefix: &str) -> Var {
    let h = linear(g, x, &format!("{prefix}.fc1"));
    let h = g.gelu(h);
    linear(g, h, &format!("{prefix}.fc2"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn attention_rows_sum_to_one_and_respect_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParameterStore::new();
        init_attention(&mut store, "att", 6, 6, 8, &mut rng);
        store.init_normal("x", (5, 6), 1.0, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.param("x");
        let mask = Array2::from_shape_fn((5, 5), |(i, j)| j <= i);
        let out = multi_head_attention(&mut g, x, x, "att", 2, Some(&mask));
        assert_eq!(g.shape(out.output), (5, 8));
        for w in out.weights {
            let w = g.value(w);
            for i in 0..5 {
                assert!((w.row(i).sum() - 1.0).abs() < 1e-12);
                for j in (i + 1)..5 {
                    assert_eq!(w[[i, j]], 0.0);
                }
            }
        }
    }
}
