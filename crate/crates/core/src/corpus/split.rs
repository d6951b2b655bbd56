use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Conversation;
use crate::error::{Error, Result};

/// Train/dev/test proportions at conversation granularity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, dev: f64, test: f64) -> Result<Self> {
        let r = Self { train, dev, test };
        r.validate()?;
        Ok(r)
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.dev, self.test];
        if parts.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Config("split ratios must be non-negative".into()));
        }
        if (parts.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }
}

impl Default for SplitRatios {
    /// Proportions of the 9966 / 1087 / 2566 utterance split.
    fn default() -> Self {
        let total = (9966 + 1087 + 2566) as f64;
        Self {
            train: 9966.0 / total,
            dev: 1087.0 / total,
            test: 2566.0 / total,
        }
    }
}

/// Shuffles with `seed`, then cuts train and dev by rounded counts; test takes the rest.
pub fn split_dataset(
    conversations: &[Conversation],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<Conversation>, Vec<Conversation>, Vec<Conversation>)> {
    ratios.validate()?;
    if conversations.is_empty() {
        return Err(Error::InvalidInput("cannot split an empty dataset".into()));
    }
    let n = conversations.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratios.train * n as f64).round() as usize).min(n);
    let n_dev = ((ratios.dev * n as f64).round() as usize).min(n - n_train);
    let pick = |idx: &[usize]| idx.iter().map(|&i| conversations[i].clone()).collect::<Vec<_>>();
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_dev]),
        pick(&order[n_train + n_dev..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SyntheticParams};

    fn corpus(n: usize) -> Vec<Conversation> {
        generate_synthetic(4, n, &SyntheticParams::default()).unwrap()
    }

    #[test]
    fn counts_follow_ratios() {
        let c = corpus(100);
        let (tr, dv, te) = split_dataset(&c, SplitRatios::new(0.8, 0.1, 0.1).unwrap(), 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (80, 10, 10));
        let (tr, dv, te) = split_dataset(&c, SplitRatios::new(1.0, 0.0, 0.0).unwrap(), 1).unwrap();
        assert_eq!((tr.len(), dv.len(), te.len()), (100, 0, 0));
    }

    #[test]
    fn default_ratios_match_reported_utterance_split() {
        let r = SplitRatios::default();
        assert!((r.train - 0.7318).abs() < 1e-3);
        assert!((r.dev - 0.0798).abs() < 1e-3);
        assert!((r.test - 0.1884).abs() < 1e-3);
        assert!((r.train + r.dev + r.test - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_disjoint() {
        let c = corpus(50);
        let a = split_dataset(&c, SplitRatios::default(), 9).unwrap();
        let b = split_dataset(&c, SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
        let mut ids: Vec<&str> = a.0.iter().chain(&a.1).chain(&a.2).map(|c| c.id.as_str()).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 50);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SplitRatios::new(0.5, 0.5, 0.5).is_err());
        assert!(split_dataset(&[], SplitRatios::default(), 0).is_err());
    }
}
