use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::FeatureVector;
use super::select::FeatureSelection;
use crate::corpus::{Conversation, Utterance};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Per-feature mean and population standard deviation; a constant feature
/// gets deviation 1 so it maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(x: &Array2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::InvalidInput("cannot fit a scaler on zero rows".into()));
        }
        let n = x.nrows() as f64;
        let mean: Vec<f64> = x.columns().into_iter().map(|c| c.sum() / n).collect();
        let std = x
            .columns()
            .into_iter()
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} features, got {}",
                self.dim(),
                values.len()
            )));
        }
        Ok(values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }
}

/// Linear map applied to standardised modality features before fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `in × out`.
    pub matrix: Matrix,
}

impl Projection {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Array2::eye(dim),
        }
    }

    /// Gaussian entries with variance `1 / in_dim`.
    pub fn random(in_dim: usize, out_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (in_dim.max(1) as f64).sqrt()).expect("valid normal");
        Self {
            matrix: Array2::from_shape_fn((in_dim, out_dim), |_| normal.sample(&mut rng)),
        }
    }

    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.matrix.nrows() {
            return Err(Error::Shape(format!(
                "projection expects {} inputs, got {}",
                self.matrix.nrows(),
                values.len()
            )));
        }
        Ok((0..self.matrix.ncols())
            .map(|j| values.iter().enumerate().map(|(i, v)| v * self.matrix[[i, j]]).sum())
            .collect())
    }
}

/// `[text ‖ P·standardise(modality)]`.
pub fn concat_features(
    text_rep: &[f64],
    modality: &FeatureVector,
    scaler: &StandardScaler,
    projection: Option<&Projection>,
) -> Result<Vec<f64>> {
    let z = scaler.transform(modality.values())?;
    let z = match projection {
        Some(p) => p.apply(&z)?,
        None => z,
    };
    let mut out = text_rep.to_vec();
    out.extend(z);
    Ok(out)
}

/// Which per-utterance vector feeds fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityChannel {
    Audio,
    Vision,
}

impl ModalityChannel {
    pub fn of(self, u: &Utterance) -> Option<&FeatureVector> {
        match self {
            ModalityChannel::Audio => u.audio_features.as_ref(),
            ModalityChannel::Vision => u.vision_features.as_ref(),
        }
    }
}

impl std::str::FromStr for ModalityChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "audio" => Ok(ModalityChannel::Audio),
            "vision" => Ok(ModalityChannel::Vision),
            other => Err(Error::Config(format!("unknown modality channel `{other}`"))),
        }
    }
}

/// Stacks one channel over every utterance of the given conversations.
/// Rows follow conversation then utterance order; each row is labelled
/// with whether the utterance is non-neutral.
pub fn stack_channel(conversations: &[Conversation], channel: ModalityChannel) -> Result<(Array2<f64>, Vec<bool>)> {
    let mut rows: Vec<&[f64]> = Vec::new();
    let mut labels = Vec::new();
    for c in conversations {
        for u in &c.utterances {
            let fv = channel.of(u).ok_or_else(|| {
                Error::validation(&c.id, format!("utterance {} has no {channel:?} features", u.index))
            })?;
            rows.push(fv.values());
            labels.push(u.emotion.is_some_and(|e| !e.is_neutral()));
        }
    }
    let dim = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape(format!("{channel:?} features have mixed widths")));
    }
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    let x = Array2::from_shape_vec((rows.len(), dim), flat).map_err(|e| Error::Shape(e.to_string()))?;
    Ok((x, labels))
}

/// Selected, standardised features of every utterance as a `len × k`
/// matrix for TSAM. Utterances without features get the fitted mean, i.e.
/// a zero row.
pub fn modality_matrix(conversation: &Conversation, channel: ModalityChannel, selection: &FeatureSelection) -> Result<Matrix> {
    let k = selection.output_dim();
    let mut m = Matrix::zeros((conversation.len(), k));
    for (i, u) in conversation.utterances.iter().enumerate() {
        if let Some(fv) = channel.of(u) {
            let row = selection.apply(fv.values())?;
            for (j, v) in row.into_iter().enumerate() {
                m[[i, j]] = v;
            }
        }
    }
    Ok(m)
}
