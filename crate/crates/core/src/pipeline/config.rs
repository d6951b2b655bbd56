use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{DatasetFormat, SplitRatios, SyntheticParams};
use crate::error::{Error, Result};
use crate::fusion::{ModalityChannel, SelectionMode};
use crate::nn::AdamConfig;
use crate::taxonomy::BaselineConfig;

/// Environment variable consulted when no `--config` is given.
pub const CONFIG_ENV: &str = "ECPEC_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// `native` or `ecf`.
    pub format: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: None,
            dev: None,
            test: None,
            format: "native".into(),
        }
    }
}

impl DataConfig {
    pub fn format(&self) -> Result<DatasetFormat> {
        self.format.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_conversations: usize,
    pub params: SyntheticParams,
    pub split: SplitRatios,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_conversations: 200,
            params: SyntheticParams::default(),
            split: SplitRatios {
                train: 0.7,
                dev: 0.15,
                test: 0.15,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    pub erc: bool,
    pub cee: bool,
    pub cse: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            erc: true,
            cee: true,
            cse: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionSourceKind {
    /// Gold labels from the dataset (oracle mode).
    Gold,
    /// A text classifier, see [`ClassifierConfig`].
    Classifier,
    /// A stage-1 label file as written by the pipeline.
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmotionSource {
    pub kind: EmotionSourceKind,
    pub path: Option<PathBuf>,
    /// Fraction of utterances whose stage-1 label is replaced by a different
    /// random one. For error-propagation experiments; 0 in normal use.
    pub noise: f64,
}

impl Default for EmotionSource {
    fn default() -> Self {
        Self {
            kind: EmotionSourceKind::Gold,
            path: None,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Baseline,
    Command,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub program: Option<String>,
    pub args: Vec<String>,
    pub endpoint: Option<String>,
    pub timeout_secs: u64,
    pub window: usize,
    pub baseline: BaselineConfig,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::Baseline,
            program: None,
            args: Vec::new(),
            endpoint: None,
            timeout_secs: 30,
            window: 12,
            baseline: BaselineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderSettings {
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_tokens: usize,
    pub max_distance: usize,
    pub local_layers: usize,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        Self {
            n_layers: 1,
            n_heads: 4,
            max_tokens: 512,
            max_distance: 32,
            local_layers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeeSettings {
    pub layers: usize,
    pub n_heads: usize,
    pub dim: usize,
    pub hidden: usize,
    pub threshold: f64,
    pub lambda_aux: f64,
    pub encoder: EncoderSettings,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for CeeSettings {
    fn default() -> Self {
        Self {
            layers: 2,
            n_heads: 4,
            dim: 64,
            hidden: 64,
            threshold: 0.5,
            lambda_aux: 0.2,
            encoder: EncoderSettings::default(),
            epochs: 50,
            batch_size: 8,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CseSettings {
    pub beta: f64,
    pub k: usize,
    pub dim: usize,
    pub encoder: EncoderSettings,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
}

impl Default for CseSettings {
    fn default() -> Self {
        Self {
            beta: 0.5,
            k: 5,
            dim: 64,
            encoder: EncoderSettings {
                local_layers: 0,
                ..EncoderSettings::default()
            },
            epochs: 50,
            batch_size: 16,
            optimizer: AdamConfig {
                lr: 3e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub enabled: bool,
    pub channel: ModalityChannel,
    pub mode: SelectionMode,
    pub target_dim: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            channel: ModalityChannel::Audio,
            mode: SelectionMode::L1,
            target_dim: 128,
        }
    }
}

impl FusionConfig {
    /// Checks `target_dim` against the width of the features it will see.
    pub fn validate_for(&self, input_dim: usize) -> Result<()> {
        if self.target_dim == 0 || self.target_dim > input_dim {
            return Err(Error::Config(format!(
                "fusion.target_dim {} must lie in 1..={input_dim}",
                self.target_dim
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Checkpoint root; defaults to `<output_dir>/checkpoints`.
    pub checkpoint_dir: Option<PathBuf>,
    pub data: DataConfig,
    pub synthetic: SyntheticConfig,
    pub stages: StageToggles,
    pub emotion_source: EmotionSource,
    pub classifier: ClassifierConfig,
    pub cee: CeeSettings,
    pub cse: CseSettings,
    pub fusion: FusionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs/default"),
            checkpoint_dir: None,
            data: DataConfig::default(),
            synthetic: SyntheticConfig::default(),
            stages: StageToggles::default(),
            emotion_source: EmotionSource::default(),
            classifier: ClassifierConfig::default(),
            cee: CeeSettings::default(),
            cse: CseSettings::default(),
            fusion: FusionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn checkpoint_root(&self) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoints"))
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stages;
        if !(s.erc || s.cee || s.cse) {
            return Err(Error::Config("every pipeline stage is disabled".into()));
        }
        if s.cse && !s.cee {
            return Err(Error::Config("stage cse attaches spans to cee pairs; enable cee too".into()));
        }
        if !(0.0..=1.0).contains(&self.emotion_source.noise) {
            return Err(Error::Config("emotion_source.noise must lie in [0, 1]".into()));
        }
        if self.emotion_source.kind == EmotionSourceKind::File && self.emotion_source.path.is_none() {
            return Err(Error::Config("emotion_source.kind = file needs emotion_source.path".into()));
        }
        if !(self.cee.threshold > 0.0 && self.cee.threshold < 1.0) {
            return Err(Error::Config("cee.threshold must lie in (0, 1)".into()));
        }
        self.data.format()?;
        Ok(())
    }

    /// Defaults, then the JSON file (if any), then `key.path=value`
    /// overrides. Values parse as JSON and fall back to plain strings.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default()).expect("config serialises");
        let env_path = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        if let Some(p) = path.map(Path::to_path_buf).or(env_path) {
            let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            let file: Value = serde_json::from_str(&text).map_err(|e| Error::parse(&p, e))?;
            merge(&mut value, file);
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `a.b.c=value` inside a JSON object.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("at least one key part")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let sets = vec!["seed=7".to_string(), "cee.dim=32".into(), "output_dir=out/x".into()];
        let cfg = PipelineConfig::load(None, &sets).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.cee.dim, 32);
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
    }

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = PipelineConfig::load(None, &["cee.bogus=1".to_string()]).unwrap_err();
        assert!(err.is_config());
        assert!(PipelineConfig::load(None, &["novalue".to_string()]).unwrap_err().is_config());
    }

    #[test]
    fn all_stages_off_is_rejected() {
        let sets: Vec<String> = ["stages.erc=false", "stages.cee=false", "stages.cse=false"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert!(PipelineConfig::load(None, &sets).unwrap_err().is_config());
    }

    #[test]
    fn file_then_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "cse": {"k": 2}}"#).unwrap();
        let cfg = PipelineConfig::load(Some(&p), &["seed=4".to_string()]).unwrap();
        assert_eq!((cfg.seed, cfg.cse.k, cfg.cse.dim), (4, 2, 64));
    }

    #[test]
    fn operating_points_fit_compare_width() {
        for d in [128, 296, 352, 1000] {
            let f = FusionConfig {
                target_dim: d,
                ..Default::default()
            };
            f.validate_for(crate::fusion::COMPARE_DIM).unwrap();
        }
        let f = FusionConfig::default();
        assert!(f.validate_for(crate::fusion::GEMAPS_DIM).is_err());
    }
}
