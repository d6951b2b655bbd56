//! Stage orchestration (ERC → CEE → CSE), configuration and checkpoints.
//!
//! Every stage reads and writes plain files: datasets and configs as JSON,
//! parameters as [`ParameterStore`](crate::nn::ParameterStore) JSON,
//! predictions as JSONL. Stage 2 consumes stage-1 *labels*, never hidden
//! states, so swapping in gold labels needs no retraining.

mod config;
mod run;

pub use config::{
    apply_override, ClassifierConfig, ClassifierKind, CseSettings, CeeSettings, DataConfig, EmotionSource,
    EmotionSourceKind, EncoderSettings, FusionConfig, PipelineConfig, StageToggles, SyntheticConfig, CONFIG_ENV,
};
pub use run::{
    apply_label_noise, build_span_model, build_tsam, generate_data, load_split, read_report, run_pipeline,
    select_features_stage, stage_one_labels, train_cee_stage, train_cse_stage, train_erc_stage, CheckpointLayout,
    PipelineReport, RunArtifacts, Split, StageOneLabels,
};
