//! Scoring surfaces for the three stages and majority-vote ensembling.
//!
//! Every F1 here is 0 when precision and recall are both 0, never NaN.

mod ensemble;
mod erc;
mod pairs;
mod records;

pub use ensemble::{ensemble_records, majority_vote};
pub use erc::{erc_scores, erc_scores_with, ErcScore};
pub use pairs::{cee_pos_f1, span_proportional_f1, PairScore, SpanScore};
pub use records::{
    format_competition, gold_records, read_predictions, records_for_conversation, write_predictions,
    PredictionRecord,
};

pub(crate) fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall <= 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub(crate) fn ratio(num: f64, den: f64) -> f64 {
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}
