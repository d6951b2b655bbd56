//! Central finite-difference oracle for analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParameterStore;

/// Gradient norms below this are compared on an absolute scale.
const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ArrayCheck {
    pub name: String,
    pub len: usize,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// `‖analytic − numeric‖ / max(‖analytic‖ + ‖numeric‖, 1e-6)`
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub arrays: Vec<ArrayCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.arrays.iter().map(|a| a.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ArrayCheck> {
        self.arrays
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares backprop gradients of the scalar built by `loss` against central
/// differences with step `h`, for every parameter array in `store`.
pub fn check_gradients<F>(store: &ParameterStore, h: f64, loss: F) -> GradCheckReport
where
    F: Fn(&mut Graph) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = loss(&mut g);
        g.backward(out)
    };
    let eval = |s: &ParameterStore| {
        let mut g = Graph::new(s);
        let out = loss(&mut g);
        g.scalar(out)
    };

    let mut work = store.clone();
    let mut arrays = Vec::new();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let len = store.get(&name).map_or(0, |m| m.len());
        let mut numeric = Vec::with_capacity(len);
        for k in 0..len {
            let orig = *work.get(&name).and_then(|m| m.iter().nth(k)).expect("in range");
            set(&mut work, &name, k, orig + h);
            let up = eval(&work);
            set(&mut work, &name, k, orig - h);
            let down = eval(&work);
            set(&mut work, &name, k, orig);
            numeric.push((up - down) / (2.0 * h));
        }
        let a: Vec<f64> = analytic
            .get(&name)
            .map(|m| m.iter().copied().collect())
            .unwrap_or_else(|| vec![0.0; len]);
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let an = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        arrays.push(ArrayCheck {
            name,
            len,
            analytic_norm: an,
            numeric_norm: nn,
            rel_error: diff / (an + nn).max(NORM_FLOOR),
        });
    }
    GradCheckReport { arrays }
}

fn set(store: &mut ParameterStore, name: &str, k: usize, value: f64) {
    let m = store.get_mut(name).expect("parameter exists");
    let cols = m.ncols();
    m[[k / cols, k % cols]] = value;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{init_linear, linear};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn passes_for_correct_backprop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParameterStore::new();
        init_linear(&mut store, "l", 3, 2, &mut rng);
        store.init_normal("l.b", (1, 2), 0.5, &mut rng);
        let x = ndarray::array![[0.5, -1.0, 2.0], [1.0, 0.3, -0.2]];
        let report = check_gradients(&store, 1e-5, |g| {
            let xv = g.constant(x.clone());
            let y = linear(g, xv, "l");
            let y = g.tanh(y);
            g.sum_all(y)
        });
        assert!(report.max_rel_error() < 1e-7, "{report:?}");
    }
}
