use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ClassifierKind, EmotionSourceKind, EncoderSettings, PipelineConfig};
use crate::corpus::{generate_synthetic, load_dataset, save_dataset, split_dataset, Conversation};
use crate::encoder::{EncoderConfig, TextEncoder, Vocab};
use crate::error::{Error, Result};
use crate::evaluation::{
    cee_pos_f1, erc_scores, gold_records, span_proportional_f1, write_predictions, ErcScore, PairScore,
    PredictionRecord, SpanScore,
};
use crate::fusion::{fit_selection, modality_matrix, stack_channel, FeatureSelection};
use crate::nn::ParameterStore;
use crate::span::{span_examples, train_cse, CseTrainConfig, SpanEpochLog, SpanModel, SpanModelConfig};
use crate::taxonomy::{
    predict_emotions, BaselineClassifier, CommandClassifier, EmotionLabel, HttpClassifier, TextClassifier,
};
use crate::tsam::{train_cee, CeeExample, CeeTrainConfig, EpochLog, Tsam, TsamConfig};

/// Stage-1 labels keyed by conversation id.
pub type StageOneLabels = BTreeMap<String, Vec<EmotionLabel>>;

// Offsets that give every stage its own stream from the global seed.
const SEED_CEE_ENCODER: u64 = 1;
const SEED_TSAM: u64 = 2;
const SEED_CEE_SHUFFLE: u64 = 3;
const SEED_CSE_ENCODER: u64 = 4;
const SEED_SPAN: u64 = 5;
const SEED_CSE_SHUFFLE: u64 = 6;
const SEED_NOISE: u64 = 7;
const SEED_ERC: u64 = 8;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::parse(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::parse(path, e))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

fn missing(stage: &str, path: &Path, hint: &str) -> Error {
    Error::MissingCheckpoint {
        stage: stage.into(),
        message: format!("{} not found; {hint}", path.display()),
    }
}

/// Where each stage keeps its artifacts under the checkpoint root.
#[derive(Debug, Clone)]
pub struct CheckpointLayout {
    pub root: PathBuf,
}

impl CheckpointLayout {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            root: config.checkpoint_root(),
        }
    }

    pub fn erc(&self) -> PathBuf {
        self.root.join("erc.json")
    }

    pub fn selection(&self) -> PathBuf {
        self.root.join("selection.json")
    }

    pub fn cee_model(&self) -> PathBuf {
        self.root.join("cee").join("model.json")
    }

    pub fn cee_params(&self) -> PathBuf {
        self.root.join("cee").join("params.json")
    }

    pub fn cee_log(&self) -> PathBuf {
        self.root.join("cee").join("train_log.jsonl")
    }

    pub fn cse_model(&self) -> PathBuf {
        self.root.join("cse").join("model.json")
    }

    pub fn cse_params(&self) -> PathBuf {
        self.root.join("cse").join("params.json")
    }

    pub fn cse_log(&self) -> PathBuf {
        self.root.join("cse").join("train_log.jsonl")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn key(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

pub fn load_split(config: &PipelineConfig, split: Split) -> Result<Vec<Conversation>> {
    let path = match split {
        Split::Train => &config.data.train,
        Split::Dev => &config.data.dev,
        Split::Test => &config.data.test,
    };
    let path = path
        .as_ref()
        .ok_or_else(|| Error::Config(format!("data.{} is not set", split.key())))?;
    if !path.exists() {
        return Err(Error::Config(format!("data.{} = {} does not exist", split.key(), path.display())));
    }
    load_dataset(path, config.data.format()?)
}

/// Writes a seeded synthetic corpus as `train.json`, `dev.json` and
/// `test.json` under `out_dir`.
pub fn generate_data(config: &PipelineConfig, out_dir: &Path) -> Result<[PathBuf; 3]> {
    let s = &config.synthetic;
    let convs = generate_synthetic(config.seed, s.n_conversations, &s.params)?;
    let (train, dev, test) = split_dataset(&convs, s.split, config.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = ["train", "dev", "test"].map(|n| out_dir.join(format!("{n}.json")));
    for (p, part) in paths.iter().zip([&train, &dev, &test]) {
        save_dataset(p, part)?;
    }
    Ok(paths)
}

pub fn train_erc_stage(config: &PipelineConfig) -> Result<PathBuf> {
    let train = load_split(config, Split::Train)?;
    let mut bc = config.classifier.baseline.clone();
    bc.window = config.classifier.window;
    bc.seed = config.seed.wrapping_add(SEED_ERC);
    let model = BaselineClassifier::train_on_conversations(&train, &bc)?;
    let path = CheckpointLayout::new(config).erc();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(&path)?;
    Ok(path)
}

pub fn select_features_stage(config: &PipelineConfig) -> Result<FeatureSelection> {
    let train = load_split(config, Split::Train)?;
    let (x, y) = stack_channel(&train, config.fusion.channel)?;
    config.fusion.validate_for(x.ncols())?;
    let selection = fit_selection(&x, &y, config.fusion.target_dim, config.fusion.mode)?;
    let path = CheckpointLayout::new(config).selection();
    write_json(&path, &selection)?;
    Ok(selection)
}

fn load_selection(config: &PipelineConfig) -> Result<Option<FeatureSelection>> {
    if !config.fusion.enabled {
        return Ok(None);
    }
    let path = CheckpointLayout::new(config).selection();
    if !path.exists() {
        return Err(missing("select-features", &path, "run `select-features` first"));
    }
    Ok(Some(read_json(&path)?))
}

fn attach_features(
    config: &PipelineConfig,
    examples: &mut [CeeExample],
    selection: Option<&FeatureSelection>,
) -> Result<()> {
    if let Some(sel) = selection {
        for ex in examples {
            ex.features = Some(modality_matrix(&ex.conversation, config.fusion.channel, sel)?);
        }
    }
    Ok(())
}

fn encoder_config(settings: &EncoderSettings, dim: usize, vocab: usize, seed: u64) -> EncoderConfig {
    let mut c = EncoderConfig::new(dim, settings.n_layers, settings.n_heads, vocab);
    c.max_tokens = settings.max_tokens;
    c.max_distance = settings.max_distance;
    c.local_layers = settings.local_layers;
    c.seed = seed;
    c
}

/// Builds an untrained TSAM for the training split.
pub fn build_tsam(config: &PipelineConfig, train: &[Conversation], modality_dim: usize) -> Result<Tsam> {
    let s = &config.cee;
    let vocab = Vocab::build(train);
    let ecfg = encoder_config(&s.encoder, s.dim, vocab.len(), config.seed.wrapping_add(SEED_CEE_ENCODER));
    let encoder = TextEncoder::new(ecfg, vocab, "enc")?;
    Tsam::new(
        TsamConfig {
            layers: s.layers,
            n_heads: s.n_heads,
            dim: s.dim,
            n_emotions: EmotionLabel::COUNT,
            hidden: s.hidden,
            threshold: s.threshold,
            lambda_aux: s.lambda_aux,
            modality_dim,
            seed: config.seed.wrapping_add(SEED_TSAM),
        },
        encoder,
    )
}

pub fn train_cee_stage(config: &PipelineConfig, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
    let train = load_split(config, Split::Train)?;
    let dev = match config.data.dev {
        Some(_) => load_split(config, Split::Dev)?,
        None => Vec::new(),
    };
    let selection = load_selection(config)?;
    let modality_dim = selection.as_ref().map_or(0, FeatureSelection::output_dim);
    let model = build_tsam(config, &train, modality_dim)?;
    let mut tr: Vec<CeeExample> = train.into_iter().map(CeeExample::gold).collect();
    let mut dv: Vec<CeeExample> = dev.into_iter().map(CeeExample::gold).collect();
    attach_features(config, &mut tr, selection.as_ref())?;
    attach_features(config, &mut dv, selection.as_ref())?;
    let s = &config.cee;
    let tc = CeeTrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        optimizer: s.optimizer,
        log_metrics: true,
        seed: config.seed.wrapping_add(SEED_CEE_SHUFFLE),
    };
    let (params, logs) = train_cee(&model, model.init_params(), &tr, &dv, &tc, &mut on_epoch)?;
    let layout = CheckpointLayout::new(config);
    write_json(&layout.cee_model(), &model)?;
    params.save(layout.cee_params())?;
    write_jsonl(&layout.cee_log(), &logs)?;
    Ok(logs)
}

pub fn build_span_model(config: &PipelineConfig, train: &[Conversation]) -> Result<SpanModel> {
    let s = &config.cse;
    let vocab = Vocab::build(train);
    let mut ecfg = encoder_config(&s.encoder, s.dim, vocab.len(), config.seed.wrapping_add(SEED_CSE_ENCODER));
    ecfg.n_segments = 3;
    let encoder = TextEncoder::new(ecfg, vocab, "span.enc")?;
    SpanModel::new(
        SpanModelConfig {
            beta: s.beta,
            k: s.k,
            dim: s.dim,
            seed: config.seed.wrapping_add(SEED_SPAN),
        },
        encoder,
    )
}

pub fn train_cse_stage(config: &PipelineConfig, mut on_epoch: impl FnMut(&SpanEpochLog)) -> Result<Vec<SpanEpochLog>> {
    let train = load_split(config, Split::Train)?;
    let model = build_span_model(config, &train)?;
    let examples = span_examples(&train, model.max_tokens())?;
    let s = &config.cse;
    let tc = CseTrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        optimizer: s.optimizer,
        log_metrics: true,
        seed: config.seed.wrapping_add(SEED_CSE_SHUFFLE),
    };
    let (params, logs) = train_cse(&model, model.init_params(), &examples, &tc, &mut on_epoch)?;
    let layout = CheckpointLayout::new(config);
    write_json(&layout.cse_model(), &model)?;
    params.save(layout.cse_params())?;
    write_jsonl(&layout.cse_log(), &logs)?;
    Ok(logs)
}

/// Replaces each label, with probability `rate`, by a different label drawn
/// uniformly from the other six.
pub fn apply_label_noise(labels: &StageOneLabels, rate: f64, seed: u64) -> StageOneLabels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labels
        .iter()
        .map(|(id, ls)| {
            let noisy = ls
                .iter()
                .map(|&l| {
                    if rng.random::<f64>() < rate {
                        let others: Vec<EmotionLabel> =
                            EmotionLabel::ALL.iter().copied().filter(|o| *o != l).collect();
                        others[rng.random_range(0..others.len())]
                    } else {
                        l
                    }
                })
                .collect();
            (id.clone(), noisy)
        })
        .collect()
}

fn build_classifier(config: &PipelineConfig) -> Result<Box<dyn TextClassifier>> {
    let c = &config.classifier;
    Ok(match c.kind {
        ClassifierKind::Baseline => {
            let path = CheckpointLayout::new(config).erc();
            if !path.exists() {
                return Err(missing("erc", &path, "run `train-erc-baseline` first"));
            }
            Box::new(BaselineClassifier::load(&path)?)
        }
        ClassifierKind::Command => {
            let program = c
                .program
                .clone()
                .ok_or_else(|| Error::Config("classifier.kind = command needs classifier.program".into()))?;
            Box::new(CommandClassifier::new(program, c.args.clone()))
        }
        ClassifierKind::Http => {
            let endpoint = c
                .endpoint
                .clone()
                .ok_or_else(|| Error::Config("classifier.kind = http needs classifier.endpoint".into()))?;
            Box::new(HttpClassifier::new(endpoint, Duration::from_secs(c.timeout_secs)))
        }
    })
}

/// Stage-1 labels for every conversation from the configured source, with
/// the configured noise applied.
pub fn stage_one_labels(config: &PipelineConfig, conversations: &[Conversation]) -> Result<StageOneLabels> {
    let src = &config.emotion_source;
    let labels: StageOneLabels = match src.kind {
        EmotionSourceKind::Gold => conversations.iter().map(|c| (c.id.clone(), c.gold_emotions())).collect(),
        EmotionSourceKind::Classifier => {
            let clf = build_classifier(config)?;
            conversations
                .iter()
                .map(|c| Ok((c.id.clone(), predict_emotions(clf.as_ref(), c, config.classifier.window)?)))
                .collect::<Result<_>>()?
        }
        EmotionSourceKind::File => {
            let path = src.path.as_ref().expect("validated");
            if !path.exists() {
                return Err(Error::Config(format!("emotion_source.path {} does not exist", path.display())));
            }
            let all: StageOneLabels = read_json(path)?;
            conversations
                .iter()
                .map(|c| {
                    let ls = all.get(&c.id).ok_or_else(|| {
                        Error::validation(&c.id, format!("no stage-1 labels in {}", path.display()))
                    })?;
                    Ok((c.id.clone(), ls.clone()))
                })
                .collect::<Result<_>>()?
        }
    };
    for c in conversations {
        if labels[&c.id].len() != c.len() {
            return Err(Error::validation(
                &c.id,
                format!("{} stage-1 labels for {} utterances", labels[&c.id].len(), c.len()),
            ));
        }
    }
    Ok(if src.noise > 0.0 {
        apply_label_noise(&labels, src.noise, config.seed.wrapping_add(SEED_NOISE))
    } else {
        labels
    })
}

/// Metrics for one pipeline run; sections are absent when their stage is
/// disabled or the data carries no gold annotation for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub emotion_source: EmotionSourceKind,
    pub conversations: usize,
    pub predicted_pairs: usize,
    pub erc: Option<ErcScore>,
    pub cee: Option<PairScore>,
    pub cse: Option<SpanScore>,
}

impl PipelineReport {
    pub fn to_text(&self) -> String {
        let mut lines = vec![format!(
            "conversations: {}  emotion source: {:?}  predicted pairs: {}",
            self.conversations, self.emotion_source, self.predicted_pairs
        )];
        match &self.erc {
            Some(e) => lines.push(format!(
                "erc: weighted F1 {:.4}  accuracy {:.4}  ({} utterances scored)",
                e.weighted_f1, e.accuracy, e.scored
            )),
            None => lines.push("erc: n/a".into()),
        }
        match &self.cee {
            Some(p) => lines.push(format!(
                "cee: Pos.F1 {:.4}  precision {:.4}  recall {:.4}  ({} tp / {} predicted / {} gold)",
                p.pos_f1, p.precision, p.recall, p.true_positives, p.predicted, p.gold
            )),
            None => lines.push("cee: n/a".into()),
        }
        match &self.cse {
            Some(s) => lines.push(format!("cse: weighted proportional F1 {:.4}", s.weighted_avg_proportional_f1)),
            None => lines.push("cse: n/a".into()),
        }
        lines.join("\n")
    }
}

/// Output files of [`run_pipeline`].
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub labels: PathBuf,
    pub pairs: PathBuf,
    pub predictions: PathBuf,
    pub report: PathBuf,
    pub config: PathBuf,
}

impl RunArtifacts {
    pub fn under(dir: &Path) -> Self {
        Self {
            labels: dir.join("stage1_labels.json"),
            pairs: dir.join("pairs.jsonl"),
            predictions: dir.join("predictions.jsonl"),
            report: dir.join("report.json"),
            config: dir.join("config.json"),
        }
    }
}

fn load_checkpoint<M: for<'de> Deserialize<'de>>(stage: &str, model: &Path, params: &Path, hint: &str) -> Result<(M, ParameterStore)> {
    for p in [model, params] {
        if !p.exists() {
            return Err(missing(stage, p, hint));
        }
    }
    let m: M = read_json(model)?;
    Ok((m, ParameterStore::load(params, None)?))
}

/// ERC → CEE → CSE over the test split. Writes stage-1 labels, pairs,
/// final predictions, the resolved config and the report.
pub fn run_pipeline(config: &PipelineConfig) -> Result<(PipelineReport, RunArtifacts)> {
    config.validate()?;
    let test = load_split(config, Split::Test)?;
    let layout = CheckpointLayout::new(config);

    // Load every checkpoint up front so a missing one fails before any work.
    let cee = if config.stages.cee {
        let (m, p): (Tsam, ParameterStore) =
            load_checkpoint("cee", &layout.cee_model(), &layout.cee_params(), "run `train-cee` first")?;
        p.check_manifest(&m.manifest())?;
        Some((m, p))
    } else {
        None
    };
    let cse = if config.stages.cse {
        let (m, p): (SpanModel, ParameterStore) =
            load_checkpoint("cse", &layout.cse_model(), &layout.cse_params(), "run `train-cse` first")?;
        p.check_manifest(&m.manifest())?;
        Some((m, p))
    } else {
        None
    };
    let selection = if cee.is_some() { load_selection(config)? } else { None };

    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let artifacts = RunArtifacts::under(&config.output_dir);
    fs::write(&artifacts.config, config.to_json() + "\n").map_err(|e| Error::io(&artifacts.config, e))?;

    let labels = stage_one_labels(config, &test)?;
    write_json(&artifacts.labels, &labels)?;

    let has_gold_emotions = test.iter().any(|c| c.utterances.iter().any(|u| u.emotion.is_some()));
    let erc = if config.stages.erc && has_gold_emotions {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        for c in &test {
            for (u, l) in c.utterances.iter().zip(&labels[&c.id]) {
                if let Some(g) = u.emotion {
                    pred.push(*l);
                    gold.push(g);
                }
            }
        }
        Some(erc_scores(&pred, &gold)?)
    } else {
        None
    };

    let mut records: Vec<PredictionRecord> = Vec::new();
    if let Some((model, params)) = &cee {
        let mut examples = test
            .iter()
            .map(|c| CeeExample::with_labels(c.clone(), labels[&c.id].clone()))
            .collect::<Result<Vec<_>>>()?;
        attach_features(config, &mut examples, selection.as_ref())?;
        records = model.predict_records(params, &examples, model.config.threshold)?;
    }
    write_predictions(&artifacts.pairs, &records)?;
    if let Some((model, params)) = &cse {
        records = model.attach_spans(params, &test, &records)?;
    }
    write_predictions(&artifacts.predictions, &records)?;

    let gold = gold_records(&test);
    let report = PipelineReport {
        emotion_source: config.emotion_source.kind,
        conversations: test.len(),
        predicted_pairs: records.len(),
        erc,
        cee: cee.as_ref().map(|_| cee_pos_f1(&records, &gold, true)),
        cse: cse.as_ref().map(|_| span_proportional_f1(&records, &gold)),
    };
    write_json(&artifacts.report, &report)?;
    Ok((report, artifacts))
}

pub fn read_report(path: &Path) -> Result<PipelineReport> {
    read_json(path)
}
