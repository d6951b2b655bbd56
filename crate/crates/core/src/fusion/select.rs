use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::fuse::StandardScaler;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// L1-penalised logistic regression, ranked by |weight|.
    L1,
    /// Plain variance ranking, no classifier.
    Variance,
}

impl std::str::FromStr for SelectionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(SelectionMode::L1),
            "variance" => Ok(SelectionMode::Variance),
            other => Err(Error::Config(format!("unknown selection mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Config {
    pub max_iter: usize,
    pub tol: f64,
    pub bisection_steps: usize,
}

impl Default for L1Config {
    fn default() -> Self {
        Self {
            max_iter: 500,
            tol: 1e-7,
            bisection_steps: 30,
        }
    }
}

/// A fitted L1 logistic model on standardised columns.
#[derive(Debug, Clone, PartialEq)]
pub struct L1Fit {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub lambda: f64,
}

impl L1Fit {
    pub fn nonzero(&self) -> usize {
        self.weights.iter().filter(|w| **w != 0.0).count()
    }
}

fn check_xy(x: &Array2<f64>, y: &[bool]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if x.nrows() < 2 {
        return Err(Error::InvalidInput("feature selection needs at least 2 samples".into()));
    }
    if y.iter().all(|v| *v) || y.iter().all(|v| !*v) {
        return Err(Error::InvalidInput("feature selection needs both label classes".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("feature matrix has non-finite values".into()));
    }
    Ok(())
}

fn standardized(x: &Array2<f64>) -> Array2<f64> {
    let scaler = StandardScaler::fit(x).expect("rows checked");
    let mut z = x.clone();
    for mut row in z.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - scaler.mean[j]) / scaler.std[j];
        }
    }
    z
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// FISTA on mean logistic loss plus `lambda * |w|_1` (bias unpenalised).
fn fista(z: &Array2<f64>, y: &Array1<f64>, lambda: f64, cfg: &L1Config) -> L1Fit {
    let (n, d) = z.dim();
    // Lipschitz bound of the smooth part: |Z~|_F^2 / (4n), Z~ = [Z | 1].
    let lip = (z.iter().map(|v| v * v).sum::<f64>() + n as f64) / (4.0 * n as f64);
    let step = 1.0 / lip.max(1e-12);
    let mut w = Array1::<f64>::zeros(d);
    let mut b = 0.0;
    let (mut vw, mut vb) = (w.clone(), b);
    let mut t = 1.0f64;
    for _ in 0..cfg.max_iter {
        let margin = z.dot(&vw) + vb;
        let resid: Array1<f64> = margin.mapv(sigmoid) - y;
        let gw = z.t().dot(&resid) / n as f64;
        let gb = resid.sum() / n as f64;
        let w_next: Array1<f64> = (&vw - &(gw * step)).mapv(|v| soft_threshold(v, step * lambda));
        let b_next = vb - step * gb;
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let delta = (&w_next - &w).mapv(f64::abs).fold(0.0f64, |a, v| a.max(*v)).max((b_next - b).abs());
        vw = &w_next + &((&w_next - &w) * momentum);
        vb = b_next + momentum * (b_next - b);
        w = w_next;
        b = b_next;
        t = t_next;
        if delta < cfg.tol {
            break;
        }
    }
    L1Fit {
        weights: w.to_vec(),
        bias: b,
        lambda,
    }
}

/// Largest penalty with at least `target_dim` non-zero weights, found by
/// bisection on `log lambda` below the all-zero threshold.
pub fn fit_l1_logistic(x: &Array2<f64>, y: &[bool], target_dim: usize, cfg: &L1Config) -> Result<L1Fit> {
    check_xy(x, y)?;
    let z = standardized(x);
    let yv: Array1<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    let n = z.nrows() as f64;
    let centered = &yv - yv.mean().unwrap_or(0.0);
    let lambda_max = z.t().dot(&centered).mapv(f64::abs).fold(0.0f64, |a, v| a.max(*v)) / n;
    if lambda_max == 0.0 {
        return Ok(fista(&z, &yv, 0.0, cfg));
    }
    let (mut lo, mut hi) = ((lambda_max * 1e-4).ln(), lambda_max.ln());
    let mut best = fista(&z, &yv, lo.exp(), cfg);
    if best.nonzero() < target_dim {
        return Ok(best);
    }
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        let fit = fista(&z, &yv, mid.exp(), cfg);
        if fit.nonzero() >= target_dim {
            lo = mid;
            best = fit;
        } else {
            hi = mid;
        }
    }
    Ok(best)
}

/// Fitted selector: chosen column indices plus the scaler over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub mode: SelectionMode,
    pub indices: Vec<usize>,
    /// Ranking score of each chosen index (|w| for l1, variance otherwise).
    pub weights: Vec<f64>,
    pub input_dim: usize,
    pub scaler: StandardScaler,
}

impl FeatureSelection {
    pub fn output_dim(&self) -> usize {
        self.indices.len()
    }

    /// Picks the selected columns of one raw vector and standardises them.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "selection fitted on {} features, got {}",
                self.input_dim,
                values.len()
            )));
        }
        let picked: Vec<f64> = self.indices.iter().map(|&i| values[i]).collect();
        self.scaler.transform(&picked)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

fn rank(scores: &[f64], secondary: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(secondary[b].total_cmp(&secondary[a]))
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

fn column_variances(x: &Array2<f64>) -> Vec<f64> {
    x.var_axis(Axis(0), 0.0).to_vec()
}

/// Indices of the `target_dim` features with the largest |w| under an L1
/// logistic fit, in descending order. Zero weights are ranked by absolute
/// correlation with the label.
pub fn l1_select_features(x: &Array2<f64>, y: &[bool], target_dim: usize) -> Result<Vec<usize>> {
    Ok(l1_select_with(x, y, target_dim, &L1Config::default())?.0)
}

fn l1_select_with(x: &Array2<f64>, y: &[bool], target_dim: usize, cfg: &L1Config) -> Result<(Vec<usize>, Vec<f64>)> {
    check_xy(x, y)?;
    let d = x.ncols();
    if target_dim == 0 || target_dim > d {
        return Err(Error::Config(format!("target_dim {target_dim} must lie in 1..={d}")));
    }
    let fit = fit_l1_logistic(x, y, target_dim, cfg)?;
    let magnitude: Vec<f64> = fit.weights.iter().map(|w| w.abs()).collect();
    let z = standardized(x);
    let yv: Array1<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    let centered = &yv - yv.mean().unwrap_or(0.0);
    let corr: Vec<f64> = z.t().dot(&centered).iter().map(|v| v.abs()).collect();
    let idx = rank(&magnitude, &corr, target_dim);
    let w = idx.iter().map(|&i| magnitude[i]).collect();
    Ok((idx, w))
}

/// Fits a selector in the given mode and a scaler on the chosen columns.
pub fn fit_selection(x: &Array2<f64>, y: &[bool], target_dim: usize, mode: SelectionMode) -> Result<FeatureSelection> {
    let (indices, weights) = match mode {
        SelectionMode::L1 => l1_select_with(x, y, target_dim, &L1Config::default())?,
        SelectionMode::Variance => {
            if x.nrows() < 2 {
                return Err(Error::InvalidInput("feature selection needs at least 2 samples".into()));
            }
            if target_dim == 0 || target_dim > x.ncols() {
                return Err(Error::Config(format!("target_dim {target_dim} must lie in 1..={}", x.ncols())));
            }
            let var = column_variances(x);
            let idx = rank(&var, &var, target_dim);
            let w = idx.iter().map(|&i| var[i]).collect();
            (idx, w)
        }
    };
    let picked = x.select(Axis(1), &indices);
    Ok(FeatureSelection {
        mode,
        indices,
        weights,
        input_dim: x.ncols(),
        scaler: StandardScaler::fit(&picked)?,
    })
}
