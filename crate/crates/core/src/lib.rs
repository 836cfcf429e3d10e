//! Event-aware sequence-to-sequence classification for crisis messages.
//!
//! The crate bundles everything needed to run cross-event adaptation
//! experiments without pretrained weights:
//!
//! * [`corpus`]: TSV ingestion, label unification, stratified folds and
//!   source/target adaptation plans.
//! * [`prompt`]: the five input-construction scenarios (`standard`, `postq`,
//!   `variant1`..`variant3`) that append a task question and event phrase.
//! * [`tokenizer`]: a word-level vocabulary with suffix-preserving truncation.
//! * [`tensor`]: a small reverse-mode autodiff tape over dense `f32`/`f64`
//!   tensors.
//! * [`model`]: a pre-norm encoder-decoder transformer with greedy decoding.
//! * [`train`]: Adam with linear warmup/decay, gradient accumulation and
//!   checkpoints.
//! * [`eval`]: label prediction, accuracy / weighted F1, adaptation matrices,
//!   row correlations and leave-one-out / many-to-one plan enumeration.
//! * [`synth`]: a synthetic multi-event corpus generator.
//!
//! Data-parallel loops (per-example gradients, batch evaluation, experiment
//! cells) go through [`exec`], which uses rayon when the `parallel` feature is
//! enabled and falls back to plain iteration otherwise. Reductions always run
//! in a fixed sequential order, so results do not depend on the mode.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod exec;
pub mod experiment;
pub mod model;
pub mod prompt;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod tokenizer;
pub mod train;

pub use corpus::{AdaptationPlan, CrisisRecord, EventDescriptor, FoldPlan, Label};
pub use exec::Execution;
pub use model::{ModelConfig, ParameterStore};
pub use prompt::{AugmentedInput, Scenario};
pub use tokenizer::Vocabulary;
pub use train::TrainConfig;
