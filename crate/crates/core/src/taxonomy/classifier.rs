use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::{CoarseLabel, EmotionLabel};
use super::prompt::{label_set, parse_label, render_prompt, AuxiliaryOptions, PromptSample, PromptTask};
use super::prompt::build_auxiliary_samples;
use crate::corpus::{Conversation, Tokenizer};
use crate::error::{Error, Result};

/// Anything that maps a rendered prompt to a label string.
pub trait TextClassifier {
    fn classify(&self, prompt: &str) -> Result<String>;

    fn classify_batch(&self, prompts: &[String]) -> Result<Vec<String>> {
        prompts.iter().map(|p| self.classify(p)).collect()
    }
}

/// Stage-1 emotions for every utterance of `conversation`, parsed onto the
/// 7-way label set with `neutral` as fallback.
pub fn predict_emotions(
    classifier: &dyn TextClassifier,
    conversation: &Conversation,
    window: usize,
) -> Result<Vec<EmotionLabel>> {
    let prompts = conversation
        .utterances
        .iter()
        .map(|u| render_prompt(conversation, u.index, PromptTask::Erc, window, false))
        .collect::<Result<Vec<_>>>()?;
    let outputs = classifier.classify_batch(&prompts)?;
    if outputs.len() != prompts.len() {
        return Err(Error::Classifier(format!(
            "expected {} answers, got {}",
            prompts.len(),
            outputs.len()
        )));
    }
    let labels = label_set(PromptTask::Erc, conversation);
    outputs
        .iter()
        .map(|o| parse_label(o, &labels, EmotionLabel::Neutral.name()).parse())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub window: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 0.1,
            l2: 1e-5,
            window: 12,
            seed: 0,
        }
    }
}

/// Log-linear classifier over token-presence features. Each label's score is
/// the sum of a fine-label weight and the weight of its coarse polarity, so
/// evidence for one negative emotion also lifts its siblings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineClassifier {
    features: BTreeMap<String, usize>,
    fine: Vec<Vec<f64>>,
    coarse: Vec<Vec<f64>>,
    fine_bias: Vec<f64>,
    coarse_bias: Vec<f64>,
}

fn section<'a>(prompt: &'a str, header: &str) -> &'a str {
    let Some(start) = prompt.find(header) else {
        return "";
    };
    let rest = &prompt[start + header.len()..];
    match rest.find("\n### ") {
        Some(end) => &rest[..end],
        None => rest,
    }
}

/// Feature strings for a prompt: `t:` for tokens of the label statement,
/// `h:` for tokens of the history block.
fn prompt_features(prompt: &str) -> Vec<String> {
    let tok = Tokenizer::new(true);
    let mut out: Vec<String> = tok
        .tokenize(section(prompt, "### Label statement"))
        .into_iter()
        .map(|t| format!("t:{t}"))
        .chain(
            tok.tokenize(section(prompt, "### Historical content"))
                .into_iter()
                .map(|t| format!("h:{t}")),
        )
        .collect();
    out.sort();
    out.dedup();
    out
}

impl BaselineClassifier {
    pub fn train(samples: &[PromptSample], config: &BaselineConfig) -> Result<Self> {
        if config.learning_rate <= 0.0 || !config.learning_rate.is_finite() || config.l2 < 0.0 {
            return Err(Error::Config("baseline learning rate must be positive and l2 non-negative".into()));
        }
        let data = samples
            .iter()
            .filter(|s| s.task == PromptTask::Erc)
            .map(|s| Ok((prompt_features(&s.rendered_prompt), s.gold_answer.parse::<EmotionLabel>()?)))
            .collect::<Result<Vec<_>>>()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("no emotion recognition samples to train on".into()));
        }

        let mut features = BTreeMap::new();
        for (fs, _) in &data {
            for f in fs {
                let next = features.len();
                features.entry(f.clone()).or_insert(next);
            }
        }
        let n = features.len();
        let mut model = Self {
            features,
            fine: vec![vec![0.0; EmotionLabel::COUNT]; n],
            coarse: vec![vec![0.0; CoarseLabel::COUNT]; n],
            fine_bias: vec![0.0; EmotionLabel::COUNT],
            coarse_bias: vec![0.0; CoarseLabel::COUNT],
        };
        let encoded: Vec<(Vec<usize>, EmotionLabel)> = data
            .into_iter()
            .map(|(fs, y)| (fs.iter().map(|f| model.features[f]).collect(), y))
            .collect();

        let mut order: Vec<usize> = (0..encoded.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let lr = config.learning_rate / (1.0 + epoch as f64 * 0.1);
            for &i in &order {
                let (ids, y) = &encoded[i];
                let p = model.probabilities(ids);
                let mut d_fine = p;
                d_fine[y.code()] -= 1.0;
                let mut d_coarse = [0.0; CoarseLabel::COUNT];
                for l in EmotionLabel::ALL {
                    d_coarse[l.coarse().code()] += d_fine[l.code()];
                }
                for &f in ids {
                    for (w, g) in model.fine[f].iter_mut().zip(&d_fine) {
                        *w -= lr * (g + config.l2 * *w);
                    }
                    for (w, g) in model.coarse[f].iter_mut().zip(&d_coarse) {
                        *w -= lr * (g + config.l2 * *w);
                    }
                }
                for (b, g) in model.fine_bias.iter_mut().zip(&d_fine) {
                    *b -= lr * g;
                }
                for (b, g) in model.coarse_bias.iter_mut().zip(&d_coarse) {
                    *b -= lr * g;
                }
            }
        }
        if !model.fine.iter().chain(&model.coarse).flatten().all(|v| v.is_finite()) {
            return Err(Error::Diverged("baseline classifier weights are not finite".into()));
        }
        Ok(model)
    }

    /// Builds emotion recognition prompts from `conversations` and trains on them.
    pub fn train_on_conversations(conversations: &[Conversation], config: &BaselineConfig) -> Result<Self> {
        let options = AuxiliaryOptions {
            window: config.window,
            include_video: false,
            tasks: vec![PromptTask::Erc],
        };
        let mut samples = Vec::new();
        for c in conversations {
            samples.extend(build_auxiliary_samples(c, &options)?);
        }
        Self::train(&samples, config)
    }

    fn probabilities(&self, ids: &[usize]) -> [f64; EmotionLabel::COUNT] {
        let mut logits = [0.0; EmotionLabel::COUNT];
        for l in EmotionLabel::ALL {
            let c = l.coarse().code();
            let mut s = self.fine_bias[l.code()] + self.coarse_bias[c];
            for &f in ids {
                s += self.fine[f][l.code()] + self.coarse[f][c];
            }
            logits[l.code()] = s;
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in &mut logits {
            *v = (*v - max).exp();
            sum += *v;
        }
        logits.map(|v| v / sum)
    }

    pub fn predict(&self, prompt: &str) -> EmotionLabel {
        let ids: Vec<usize> = prompt_features(prompt)
            .iter()
            .filter_map(|f| self.features.get(f).copied())
            .collect();
        let p = self.probabilities(&ids);
        let best = (0..EmotionLabel::COUNT)
            .fold(0, |b, i| if p[i] > p[b] { i } else { b });
        EmotionLabel::ALL[best]
    }

    pub fn num_features(&self) -> usize {
        self.features.len()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

impl TextClassifier for BaselineClassifier {
    fn classify(&self, prompt: &str) -> Result<String> {
        Ok(self.predict(prompt).name().to_string())
    }
}

#[derive(Serialize)]
struct Request<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct Response {
    label: String,
}

/// Runs an external program once per batch, writing one `{"prompt": ...}`
/// line per prompt to its stdin and reading one `{"label": ...}` line back.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandClassifier {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
}

impl CommandClassifier {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl TextClassifier for CommandClassifier {
    fn classify(&self, prompt: &str) -> Result<String> {
        let mut out = self.classify_batch(&[prompt.to_string()])?;
        Ok(out.remove(0))
    }

    fn classify_batch(&self, prompts: &[String]) -> Result<Vec<String>> {
        let fail = |m: String| Error::Classifier(format!("{}: {m}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot start: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let payload = prompts
            .iter()
            .map(|p| serde_json::to_string(&Request { prompt: p }).expect("string serializes"))
            .collect::<Vec<_>>()
            .join("\n");
        let writer = std::thread::spawn(move || -> std::io::Result<()> {
            stdin.write_all(payload.as_bytes())?;
            stdin.write_all(b"\n")
        });
        let stdout = child.stdout.take().expect("piped stdout");
        let mut labels = Vec::with_capacity(prompts.len());
        for line in BufReader::new(stdout).lines() {
            let line = line.map_err(|e| fail(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: Response = serde_json::from_str(&line).map_err(|e| fail(format!("bad response line: {e}")))?;
            labels.push(r.label);
        }
        writer
            .join()
            .map_err(|_| fail("writer thread panicked".into()))?
            .map_err(|e| fail(format!("cannot write prompts: {e}")))?;
        let status = child.wait().map_err(|e| fail(e.to_string()))?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        if labels.len() != prompts.len() {
            return Err(fail(format!("sent {} prompts, got {} labels", prompts.len(), labels.len())));
        }
        Ok(labels)
    }
}

/// POSTs `{"prompt": ...}` to an HTTP endpoint and expects `{"label": ...}`.
#[derive(Debug, Clone)]
pub struct HttpClassifier {
    endpoint: String,
    agent: ureq::Agent,
}

impl HttpClassifier {
    pub fn new(endpoint: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.into(),
            agent,
        }
    }
}

impl TextClassifier for HttpClassifier {
    fn classify(&self, prompt: &str) -> Result<String> {
        let fail = |m: String| Error::Classifier(format!("{}: {m}", self.endpoint));
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .send_json(Request { prompt })
            .map_err(|e| fail(e.to_string()))?;
        let r: Response = resp.body_mut().read_json().map_err(|e| fail(e.to_string()))?;
        Ok(r.label)
    }
}
