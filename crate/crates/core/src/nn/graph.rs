//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Parameters
//! are bound lazily from a [`ParameterStore`] by name; [`Graph::backward`]
//! returns gradients keyed by the same names.

use std::collections::{BTreeMap, HashMap};

use ndarray::{s, Array2, Axis, Zip};

use super::params::ParameterStore;

pub type Matrix = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    OuterAdd(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    LayerNorm { x: Var, xhat: Matrix, inv_std: Vec<f64> },
    Softmax(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<Option<usize>>),
    SumAll(Var),
    SumRows(Var),
    BceWithLogits { logits: Var, targets: Matrix },
    CrossEntropy { logits: Var, probs: Matrix, target: usize },
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Parameter gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub by_name: BTreeMap<String, Matrix>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.by_name.get(name)
    }

    /// Adds `other` into `self`, key by key.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => *acc += g,
                None => {
                    self.by_name.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.by_name.values_mut() {
            g.mapv_inplace(|v| v * factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.by_name.values().all(|g| g.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.by_name
            .values()
            .flat_map(|g| g.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub struct Graph<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
    bound: HashMap<String, Var>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds the named parameter; repeated calls return the same variable.
    ///
    /// Panics if the store has no such parameter, which is a wiring bug.
    pub fn param(&mut self, name: &str) -> Var {
        if let Some(v) = self.bound.get(name) {
            return *v;
        }
        let value = self
            .store
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        let v = self.push(value, Op::Leaf);
        self.bound.insert(name.to_string(), v);
        v
    }

    pub fn has_param(&self, name: &str) -> bool {
        self.store.get(name).is_some()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) / self.value(b);
        self.push(v, Op::Div(a, b))
    }

    /// Adds a `1×m` row to every row of an `n×m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1×m row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a 1×m row");
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    /// `out[i][j] = col[i] + row[j]` for an `n×1` column and a `1×m` row.
    pub fn outer_add(&mut self, col: Var, row: Var) -> Var {
        let (c, r) = (self.value(col), self.value(row));
        assert_eq!(c.ncols(), 1);
        assert_eq!(r.nrows(), 1);
        let v = c + r;
        self.push(v, Op::OuterAdd(col, row))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddScalar(a))
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&mut self, a: Var, c: Matrix) -> Var {
        let v = self.value(a) * &c;
        self.push(v, Op::MulConst(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Row-wise normalisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, m) = xv.dim();
        let mut xhat = Matrix::zeros((n, m));
        let mut inv_std = Vec::with_capacity(n);
        for (i, row) in xv.outer_iter().enumerate() {
            let mean = row.sum() / m as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, v) in row.iter().enumerate() {
                xhat[[i, j]] = (v - mean) * inv;
            }
        }
        let value = xhat.clone();
        self.push(value, Op::LayerNorm { x, xhat, inv_std })
    }

    /// Row-wise softmax without masking.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let v = masked_softmax(self.value(x), None);
        self.push(v, Op::Softmax(x))
    }

    /// Row-wise softmax where `mask[i][j] == false` removes entry `j` from row
    /// `i`'s support. Removed entries get exactly zero weight; rows with an
    /// empty support come out as all zeros.
    pub fn masked_softmax_rows(&mut self, x: Var, mask: &Array2<bool>) -> Var {
        assert_eq!(self.value(x).dim(), mask.dim(), "mask shape mismatch");
        let v = masked_softmax(self.value(x), Some(mask));
        self.push(v, Op::Softmax(x))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    /// Builds a matrix from rows of `a`; `None` yields a zero row that
    /// carries no gradient back to `a`.
    pub fn gather_rows(&mut self, a: Var, rows: &[Option<usize>]) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros((rows.len(), src.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = r {
                v.row_mut(i).assign(&src.row(*r));
            }
        }
        self.push(v, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn row(&mut self, a: Var, index: usize) -> Var {
        self.gather_rows(a, &[Some(index)])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::SumAll(a))
    }

    /// Column sums as a `1×m` row.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        self.push(v, Op::SumRows(a))
    }

    /// Mean binary cross-entropy of `logits` against 0/1 `targets` of the same shape.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Matrix) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.dim(), targets.dim());
        let n = lv.len().max(1) as f64;
        let total: f64 = Zip::from(lv)
            .and(&targets)
            .fold(0.0, |acc, &x, &y| acc + x.max(0.0) - x * y + (-x.abs()).exp().ln_1p());
        let v = Matrix::from_elem((1, 1), total / n);
        self.push(v, Op::BceWithLogits { logits, targets })
    }

    /// `-log softmax(logits)[target]` for a `1×n` logit row restricted to `mask`.
    pub fn cross_entropy(&mut self, logits: Var, mask: Option<&[bool]>, target: usize) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), 1, "cross_entropy expects a single row");
        let n = lv.ncols();
        let mask2 = mask.map(|m| {
            assert_eq!(m.len(), n);
            Array2::from_shape_fn((1, n), |(_, j)| m[j])
        });
        assert!(mask.is_none_or(|m| m[target]), "cross_entropy target is masked");
        let probs = masked_softmax(lv, mask2.as_ref());
        let row = lv.row(0);
        let support = || (0..n).filter(|j| mask.is_none_or(|m| m[*j]));
        let max = support().map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
        let lse = support().map(|j| (row[j] - max).exp()).sum::<f64>().ln() + max;
        let loss = lse - row[target];
        let v = Matrix::from_elem((1, 1), loss);
        self.push(v, Op::CrossEntropy { logits, probs, target })
    }

    /// Gradients of scalar `loss` for every bound parameter.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).dim(), (1, 1), "backward expects a scalar");
        self.backward_with(loss, Matrix::from_elem((1, 1), 1.0))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`) back to parameters.
    pub fn backward_with(&self, output: Var, seed: Matrix) -> Gradients {
        let grads = self.propagate(output, seed);
        let mut by_name = BTreeMap::new();
        for (name, v) in &self.bound {
            let g = grads[v.0]
                .clone()
                .unwrap_or_else(|| Matrix::zeros(self.value(*v).dim()));
            by_name.insert(name.clone(), g);
        }
        Gradients { by_name }
    }

    /// Gradient with respect to an arbitrary variable (test helper).
    pub fn grad_of(&self, output: Var, seed: Matrix, wrt: Var) -> Matrix {
        let grads = self.propagate(output, seed);
        grads[wrt.0]
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value(wrt).dim()))
    }

    fn propagate(&self, output: Var, seed: Matrix) -> Vec<Option<Matrix>> {
        assert_eq!(self.value(output).dim(), seed.dim(), "seed shape mismatch");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Div(a, b) => {
                    let bv = self.value(*b);
                    let ga = &g / bv;
                    let gb = -(&g * self.value(*a)) / (bv * bv);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::OuterAdd(col, row) => {
                    let gc = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *col, gc);
                    acc(&mut grads, *row, gr);
                }
                Op::Scale(a, f) => acc(&mut grads, *a, g * *f),
                Op::AddScalar(a) => acc(&mut grads, *a, g),
                Op::MulConst(a, c) => acc(&mut grads, *a, g * c),
                Op::Relu(a) => {
                    let ga = Zip::from(&g)
                        .and(self.value(*a))
                        .map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 });
                    acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let ga = Zip::from(&g).and(self.value(*a)).map_collect(|&g, &x| g * gelu_grad(x));
                    acc(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga = Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * y * (1.0 - y));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, xhat, inv_std } => {
                    let m = xhat.ncols() as f64;
                    let mut gx = Matrix::zeros(xhat.dim());
                    for (i, inv) in inv_std.iter().enumerate() {
                        let gr = g.row(i);
                        let xr = xhat.row(i);
                        let sum_g = gr.sum();
                        let sum_gx = gr.dot(&xr);
                        for j in 0..xhat.ncols() {
                            gx[[i, j]] = inv / m * (m * gr[j] - sum_g - xr[j] * sum_gx);
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let dots = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let gx = y * &(&g - &dots);
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![at..at + h, ..]).to_owned());
                        at += h;
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    let w = g.ncols();
                    ga.slice_mut(s![.., *start..*start + w]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Matrix::zeros(self.value(*a).dim());
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = r {
                            let mut dst = ga.row_mut(*r);
                            dst += &g.row(i);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SumAll(a) => {
                    let ga = Matrix::from_elem(self.value(*a).dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let n = self.value(*a).nrows();
                    let ga = ndarray::concatenate(Axis(0), &vec![g.view(); n]).expect("same widths");
                    acc(&mut grads, *a, ga);
                }
                Op::BceWithLogits { logits, targets } => {
                    let n = targets.len().max(1) as f64;
                    let up = g[[0, 0]];
                    let ga = Zip::from(self.value(*logits))
                        .and(targets)
                        .map_collect(|&x, &y| up * (sigmoid(x) - y) / n);
                    acc(&mut grads, *logits, ga);
                }
                Op::CrossEntropy { logits, probs, target } => {
                    let mut ga = probs.clone();
                    ga[[0, *target]] -= 1.0;
                    ga *= g[[0, 0]];
                    acc(&mut grads, *logits, ga);
                }
            }
        }
        grads
    }
}

fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Row-wise softmax with optional support mask; empty-support rows are zero.
pub fn masked_softmax(x: &Matrix, mask: Option<&Array2<bool>>) -> Matrix {
    let mut out = Matrix::zeros(x.dim());
    for i in 0..x.nrows() {
        let keep = |j: usize| mask.is_none_or(|m| m[[i, j]]);
        let max = (0..x.ncols())
            .filter(|j| keep(*j))
            .map(|j| x[[i, j]])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for j in 0..x.ncols() {
            if keep(j) {
                let e = (x[[i, j]] - max).exp();
                out[[i, j]] = e;
                total += e;
            }
        }
        for j in 0..x.ncols() {
            out[[i, j]] /= total;
        }
    }
    out
}
