use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::labels::{coarse_of, CoarseLabel, EmotionLabel};
use crate::corpus::{Conversation, Utterance};
use crate::error::{Error, Result};

const SKELETON: &str = include_str!("../../templates/skeleton.txt");
const TASKS: &str = include_str!("../../templates/tasks.toml");

/// Literal that replaces every non-protagonist speaker.
pub const OTHERS: &str = "Others";
/// Gold answer for positive/negative recognition when the emotion is outside the set.
pub const OTHER_ANSWER: &str = "other";
/// Gold answer for speaker identification when the speaker is unknown.
pub const UNKNOWN_SPEAKER: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptTask {
    Erc,
    SpeakerId,
    SubLabel,
    PositiveRec,
    NegativeRec,
}

impl PromptTask {
    pub const ALL: [PromptTask; 5] = [
        PromptTask::Erc,
        PromptTask::SpeakerId,
        PromptTask::SubLabel,
        PromptTask::PositiveRec,
        PromptTask::NegativeRec,
    ];

    pub fn key(self) -> &'static str {
        match self {
            PromptTask::Erc => "erc",
            PromptTask::SpeakerId => "speaker_id",
            PromptTask::SubLabel => "sub_label",
            PromptTask::PositiveRec => "positive_rec",
            PromptTask::NegativeRec => "negative_rec",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub task: PromptTask,
    pub conversation_id: String,
    pub target_index: usize,
    pub rendered_prompt: String,
    pub gold_answer: String,
}

#[derive(Debug, Deserialize)]
struct TaskText {
    job: String,
    label: String,
}

#[derive(Debug, Deserialize)]
struct TemplateFile {
    version: String,
    #[serde(flatten)]
    tasks: BTreeMap<String, TaskText>,
}

fn templates() -> &'static TemplateFile {
    static PARSED: OnceLock<TemplateFile> = OnceLock::new();
    PARSED.get_or_init(|| toml::from_str(TASKS).expect("bundled task templates parse"))
}

/// Version tag of the bundled templates.
pub fn template_version() -> &'static str {
    &templates().version
}

/// Label names offered in the label statement of `task`.
pub fn label_set(task: PromptTask, conversation: &Conversation) -> Vec<String> {
    let names = |ls: &[EmotionLabel]| ls.iter().map(|l| l.name().to_string()).collect::<Vec<_>>();
    match task {
        PromptTask::Erc => names(&EmotionLabel::ALL),
        PromptTask::SubLabel => CoarseLabel::ALL.iter().map(|c| c.name().to_string()).collect(),
        PromptTask::PositiveRec => {
            let mut v = names(&CoarseLabel::Positive.members());
            v.push(OTHER_ANSWER.to_string());
            v
        }
        PromptTask::NegativeRec => {
            let mut v = names(&CoarseLabel::Negative.members());
            v.push(OTHER_ANSWER.to_string());
            v
        }
        PromptTask::SpeakerId => conversation
            .utterances
            .iter()
            .filter(|u| u.has_speaker())
            .map(|u| u.speaker.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    }
}

fn gold_answer(task: PromptTask, utt: &Utterance) -> String {
    let label = utt.emotion.unwrap_or(EmotionLabel::Neutral);
    match task {
        PromptTask::Erc => label.name().to_string(),
        PromptTask::SubLabel => coarse_of(label).name().to_string(),
        PromptTask::PositiveRec | PromptTask::NegativeRec => {
            let wanted = if task == PromptTask::PositiveRec {
                CoarseLabel::Positive
            } else {
                CoarseLabel::Negative
            };
            if coarse_of(label) == wanted {
                label.name().to_string()
            } else {
                OTHER_ANSWER.to_string()
            }
        }
        PromptTask::SpeakerId => {
            if utt.has_speaker() {
                utt.speaker.clone()
            } else {
                UNKNOWN_SPEAKER.to_string()
            }
        }
    }
}

fn speaker_or_unknown(u: &Utterance) -> &str {
    if u.has_speaker() {
        &u.speaker
    } else {
        UNKNOWN_SPEAKER
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxiliaryOptions {
    /// Maximum number of prior utterances in the historical block.
    pub window: usize,
    pub include_video: bool,
    pub tasks: Vec<PromptTask>,
}

impl Default for AuxiliaryOptions {
    fn default() -> Self {
        Self {
            window: 12,
            include_video: false,
            tasks: PromptTask::ALL.to_vec(),
        }
    }
}

/// Renders the prompt for one task and target utterance (1-based index).
pub fn render_prompt(
    conversation: &Conversation,
    target_index: usize,
    task: PromptTask,
    window: usize,
    include_video: bool,
) -> Result<String> {
    if window == 0 {
        return Err(Error::Config("history window must be at least 1".into()));
    }
    let target = conversation.utterance(target_index).ok_or_else(|| {
        Error::InvalidInput(format!(
            "conversation {} has no utterance {target_index}",
            conversation.id
        ))
    })?;
    let text = templates()
        .tasks
        .get(task.key())
        .ok_or_else(|| Error::Config(format!("no template for task `{}`", task.key())))?;

    let first = target_index.saturating_sub(window).max(1);
    let mut history: Vec<String> = (first..target_index)
        .filter_map(|i| conversation.utterance(i))
        .map(|u| format!("{}: \"{}\"", speaker_or_unknown(u), u.text))
        .collect();
    if history.is_empty() {
        history.push("(no earlier utterances)".to_string());
    }
    if include_video {
        if let Some(v) = &target.video_description {
            history.push(format!("Scene of the target utterance: {}", v.background));
            history.push(format!("Movement of the speaker: {}", v.movement));
            history.push(format!("Personal state of the speaker: {}", v.personal_state));
        }
    }

    let labels = label_set(task, conversation).join(", ");
    let statement = text
        .label
        .replace("{target_speaker}", speaker_or_unknown(target))
        .replace("{target_text}", &target.text)
        .replace("{labels}", &labels);
    Ok(SKELETON
        .replace("{job_description}", &text.job)
        .replace("{history}", &history.join("\n"))
        .replace("{label_statement}", &statement))
}

/// One sample per enabled task for every utterance, in utterance-major order.
pub fn build_auxiliary_samples(conversation: &Conversation, options: &AuxiliaryOptions) -> Result<Vec<PromptSample>> {
    let mut out = Vec::with_capacity(conversation.len() * options.tasks.len());
    for utt in &conversation.utterances {
        for &task in &options.tasks {
            out.push(PromptSample {
                task,
                conversation_id: conversation.id.clone(),
                target_index: utt.index,
                rendered_prompt: render_prompt(conversation, utt.index, task, options.window, options.include_video)?,
                gold_answer: gold_answer(task, utt),
            });
        }
    }
    Ok(out)
}

/// Replaces every speaker outside `protagonists` by [`OTHERS`]. Empty
/// speakers stay empty: they mark utterances with no known speaker.
pub fn normalize_speakers(conversation: &Conversation, protagonists: &BTreeSet<String>) -> Result<Conversation> {
    if protagonists.is_empty() {
        return Err(Error::InvalidInput("protagonist set must not be empty".into()));
    }
    let mut out = conversation.clone();
    for u in &mut out.utterances {
        if u.has_speaker() && !protagonists.contains(&u.speaker) {
            u.speaker = OTHERS.to_string();
        }
    }
    Ok(out)
}

/// Maps free-form model output onto `label_set`: case-insensitive exact match
/// first, then the first label whose name occurs in the output, else `fallback`.
pub fn parse_label(model_output: &str, label_set: &[String], fallback: &str) -> String {
    let cleaned = model_output
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric())
        .to_lowercase();
    if let Some(l) = label_set.iter().find(|l| l.to_lowercase() == cleaned) {
        return l.clone();
    }
    let lower = model_output.to_lowercase();
    label_set
        .iter()
        .find(|l| lower.contains(&l.to_lowercase()))
        .cloned()
        .unwrap_or_else(|| fallback.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Utterance, VideoDescription};

    fn conv(n: usize) -> Conversation {
        let speakers = ["Ross", "Waiter", "Rachel", ""];
        Conversation {
            id: "p1".into(),
            utterances: (1..=n)
                .map(|i| {
                    let mut u = Utterance::new(i, speakers[i % 4], format!("Line number {i}."));
                    u.emotion = Some(EmotionLabel::ALL[i % 7]);
                    u
                })
                .collect(),
            pairs: vec![],
        }
    }

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn block<'a>(prompt: &'a str, header: &str) -> Vec<&'a str> {
        let start = prompt.find(header).unwrap() + header.len();
        prompt[start..]
            .lines()
            .skip(1)
            .take_while(|l| !l.starts_with("### ") && !l.is_empty())
            .collect()
    }

    #[test]
    fn five_samples_per_utterance() {
        let samples = build_auxiliary_samples(&conv(3), &AuxiliaryOptions::default()).unwrap();
        assert_eq!(samples.len(), 15);
        for s in &samples {
            for header in ["### Job description", "### Historical content", "### Label statement"] {
                assert_eq!(s.rendered_prompt.matches(header).count(), 1);
            }
        }
    }

    #[test]
    fn history_is_capped_by_window() {
        let c = conv(21);
        let p = render_prompt(&c, 21, PromptTask::Erc, 12, false).unwrap();
        assert_eq!(block(&p, "### Historical content").len(), 12);
        let p = render_prompt(&c, 3, PromptTask::Erc, 12, false).unwrap();
        assert_eq!(block(&p, "### Historical content").len(), 2);
    }

    #[test]
    fn video_lines_are_appended() {
        let mut c = conv(2);
        c.utterances[1].video_description = Some(VideoDescription {
            background: "a cafe".into(),
            movement: "waves".into(),
            personal_state: "smiling".into(),
        });
        let p = render_prompt(&c, 2, PromptTask::Erc, 12, true).unwrap();
        assert!(p.contains("Scene of the target utterance: a cafe"));
        assert!(p.contains("Personal state of the speaker: smiling"));
        let without = render_prompt(&c, 2, PromptTask::Erc, 12, false).unwrap();
        assert!(!without.contains("smiling"));
    }

    #[test]
    fn erc_prompt_does_not_depend_on_target_gold() {
        let mut a = conv(4);
        let mut b = conv(4);
        a.utterances[3].emotion = Some(EmotionLabel::Joy);
        b.utterances[3].emotion = Some(EmotionLabel::Anger);
        assert_eq!(
            render_prompt(&a, 4, PromptTask::Erc, 12, false).unwrap(),
            render_prompt(&b, 4, PromptTask::Erc, 12, false).unwrap()
        );
    }

    #[test]
    fn gold_answers_follow_hierarchy() {
        let mut c = conv(1);
        c.utterances[0].emotion = Some(EmotionLabel::Anger);
        let s = build_auxiliary_samples(&c, &AuxiliaryOptions::default()).unwrap();
        let gold: BTreeMap<PromptTask, &str> = s.iter().map(|s| (s.task, s.gold_answer.as_str())).collect();
        assert_eq!(gold[&PromptTask::Erc], "anger");
        assert_eq!(gold[&PromptTask::SubLabel], "negative");
        assert_eq!(gold[&PromptTask::PositiveRec], "other");
        assert_eq!(gold[&PromptTask::NegativeRec], "anger");
        assert_eq!(gold[&PromptTask::SpeakerId], "Waiter");
    }

    #[test]
    fn speaker_normalisation() {
        let protagonists: BTreeSet<String> = ["Ross", "Rachel"].iter().map(|s| s.to_string()).collect();
        let c = conv(4);
        let once = normalize_speakers(&c, &protagonists).unwrap();
        let speakers: Vec<&str> = once.utterances.iter().map(|u| u.speaker.as_str()).collect();
        assert_eq!(speakers, ["Waiter", "Rachel", "", "Ross"].iter().map(|s| if *s == "Waiter" { OTHERS } else { s }).collect::<Vec<_>>());
        assert_eq!(normalize_speakers(&once, &protagonists).unwrap(), once);
        let all: BTreeSet<String> = ["Ross", "Rachel", "Waiter"].iter().map(|s| s.to_string()).collect();
        assert_eq!(normalize_speakers(&c, &all).unwrap(), c);
        assert!(normalize_speakers(&c, &BTreeSet::new()).is_err());
    }

    #[test]
    fn parse_label_rules() {
        let set = labels(&["neutral", "surprise", "fear", "sadness", "joy", "disgust", "anger"]);
        assert_eq!(parse_label("joy", &set, "neutral"), "joy");
        assert_eq!(parse_label("  JOY. ", &set, "neutral"), "joy");
        assert_eq!(parse_label("The emotion is Anger.", &set, "neutral"), "anger");
        assert_eq!(parse_label("qwerty", &set, "neutral"), "neutral");
    }

    #[test]
    fn hierarchy_tasks_swap_only_the_label_set() {
        let c = conv(3);
        let erc = render_prompt(&c, 3, PromptTask::Erc, 12, false).unwrap();
        let erc_labels = label_set(PromptTask::Erc, &c).join(", ");
        for task in [PromptTask::SubLabel, PromptTask::PositiveRec, PromptTask::NegativeRec] {
            let p = render_prompt(&c, 3, task, 12, false).unwrap();
            let labels = label_set(task, &c).join(", ");
            assert_eq!(p, erc.replace(&erc_labels, &labels));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let c = conv(5);
        let a = build_auxiliary_samples(&c, &AuxiliaryOptions::default()).unwrap();
        let b = build_auxiliary_samples(&c, &AuxiliaryOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(template_version(), "v1");
    }
}
