//! Multimodal feature handling: ingestion, L1-based selection,
//! standardisation and concatenation, and face-to-speaker matching.

mod face;
mod features;
mod fuse;
mod select;

pub use face::{face_features_for_utterance, match_face, BoundingBox, FaceObservation, MatchDatabase, DEFAULT_MATCH_THRESHOLD};
pub use features::{read_feature_csv, write_feature_csv, FeatureSource, FeatureVector, COMPARE_DIM, GEMAPS_DIM};
pub use fuse::{concat_features, modality_matrix, stack_channel, ModalityChannel, Projection, StandardScaler};
pub use select::{fit_l1_logistic, fit_selection, l1_select_features, FeatureSelection, L1Config, L1Fit, SelectionMode};
