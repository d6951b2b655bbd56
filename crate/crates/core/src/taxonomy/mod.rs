//! Emotion labels, the coarse polarity layer, speaker normalisation and
//! instruction-prompt construction for the emotion recognition stage.

mod classifier;
mod labels;
mod prompt;

pub use classifier::{
    predict_emotions, BaselineClassifier, BaselineConfig, CommandClassifier, HttpClassifier, TextClassifier,
};
pub use labels::{coarse_of, CoarseLabel, EmotionLabel};
pub use prompt::{
    build_auxiliary_samples, label_set, normalize_speakers, parse_label, render_prompt, template_version,
    AuxiliaryOptions, PromptSample, PromptTask, OTHERS, OTHER_ANSWER, UNKNOWN_SPEAKER,
};
