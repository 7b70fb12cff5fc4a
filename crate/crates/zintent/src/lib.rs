//! Zero-shot audio-to-intent classification at desk scale.
//!
//! A multimodal teacher aligns audio and text embeddings with a contrastive
//! objective while classifying intents; an audio-only student is distilled
//! from it; intents never seen in training are recognized by comparing test
//! audio against a pre-computed database of embeddings synthesized from
//! plain-text example sentences.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod rng;
pub mod student;
pub mod teacher;
pub mod zeroshot;
#[cfg(test)]
pub(crate) mod testutil;

pub use config::{
    ExperimentConfig, ModelConfig, PathsConfig, RunConfig, TrainConfig, ZeroshotConfig,
};
pub use corpus::{Corpus, Split, Utterance};
pub use error::{Error, Result};
pub use harness::{
    generate_corpus, layer_ablation, run_variant_grid, sample_size_sweep, spearman_rho,
    synth_trained_upper_bound, CorpusSpec, ExperimentReport, GridOutcome, SweepPoint, Variant,
};
pub use numerics::Matrix;
pub use rng::StreamRng;
pub use student::{student_train, StudentModel, StudentTraining};
pub use teacher::{teacher_train, TeacherModel, TeacherTraining};
pub use zeroshot::{
    build_embedding_database, classify_zero_shot, evaluate_zero_shot, BotDefinition,
    EmbeddingDatabase, ExtractionLayer,
};
