//! Emotion-cause analysis in conversations.
//!
//! The crate covers the full multi-stage flow: per-utterance emotion
//! recognition support ([`taxonomy`]), utterance-level cause pair extraction
//! with a two-stream attention model ([`tsam`]), token-level cause span
//! extraction ([`span`]), multimodal feature preparation ([`fusion`]),
//! scoring and ensembling ([`evaluation`]) and orchestration ([`pipeline`]).
//! All models are small, trained from scratch and run on the CPU.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod nn;
pub mod pipeline;
pub mod span;
pub mod taxonomy;
pub mod tsam;

pub use error::{Error, Result};
