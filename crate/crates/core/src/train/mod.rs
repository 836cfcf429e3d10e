//! Fine-tuning: Adam with a linear warmup/decay schedule, gradient
//! accumulation over a fixed effective batch, and binary checkpoints.
//!
//! Each optimizer step takes the next `effective_batch` examples of the
//! epoch's shuffled order. Per-example gradients of the summed token loss
//! may be computed in parallel, but they are always added into one
//! accumulator in example order and divided by the number of supervised
//! tokens. Splitting the batch into `accum_steps` micro-batches therefore
//! changes nothing numerically.
//!
//! Example order, dropout masks and everything else random derive from
//! `TrainConfig::seed` and the global step, so a run resumed from a
//! checkpoint continues exactly like an uninterrupted one.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, CrisisRecord, EventRegistry};
use crate::exec::Execution;
use crate::model::{Forward, Mode, ModelError, ParameterStore};
use crate::prompt::{construct, target_text, PromptError, Scenario};
use crate::rng::{self, derive_seed};
use crate::tensor::{Scalar, Tape, Tensor};
use crate::tokenizer::{TokenizerError, Vocabulary};

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, TensorEntry,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{adam_step, lr_at, warmup_steps, AdamConfig, OptimizerState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training examples")]
    EmptyData,
    #[error("vocabulary has no {0:?} token")]
    MissingLabelToken(&'static str),
    #[error("schedule has no decay region: total_steps {total} equals warmup {warmup}")]
    NoDecay { total: usize, warmup: usize },
    #[error("step {step} outside 0..={total}")]
    StepRange { step: usize, total: usize },
    #[error("gradient/state mismatch for {0}")]
    StateMismatch(String),
    #[error("checkpoint I/O on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),
    #[error("checkpoint was trained with vocabulary {expected}, but {found} was supplied")]
    Compatibility { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

fn default_peak_lr() -> f64 {
    5e-5
}
fn default_warmup_ratio() -> f64 {
    0.1
}
fn default_effective_batch() -> usize {
    16
}
fn default_accum_steps() -> usize {
    1
}
fn default_epochs() -> usize {
    12
}
fn default_max_src_len() -> usize {
    128
}
fn default_max_tgt_len() -> usize {
    10
}

/// Training hyperparameters. Every field has a serde default, so `{}` is a
/// valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    #[serde(default = "default_warmup_ratio")]
    pub warmup_ratio: f64,
    #[serde(default = "default_effective_batch")]
    pub effective_batch: usize,
    #[serde(default = "default_accum_steps")]
    pub accum_steps: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_max_src_len")]
    pub max_src_len: usize,
    #[serde(default = "default_max_tgt_len")]
    pub max_tgt_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn micro_batch(&self) -> usize {
        self.effective_batch / self.accum_steps.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return bad(format!("peak_lr must be finite and >= 0, got {}", self.peak_lr));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return bad(format!("warmup_ratio must be in [0, 1), got {}", self.warmup_ratio));
        }
        if self.effective_batch == 0 {
            return bad("effective_batch must be > 0".into());
        }
        if !(1..=4).contains(&self.accum_steps) || !self.effective_batch.is_multiple_of(self.accum_steps) {
            return bad(format!(
                "accum_steps must be in 1..=4 and divide effective_batch {}, got {}",
                self.effective_batch, self.accum_steps
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be > 0".into());
        }
        if self.max_src_len < 2 || self.max_tgt_len < 2 {
            return bad("max_src_len and max_tgt_len must be >= 2".into());
        }
        self.adam.validate().map_err(TrainError::Config)
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.effective_batch)
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * self.steps_per_epoch(examples)
    }
}

/// One encoded training pair. `src` holds real ids only (no padding).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub src: Vec<u32>,
    pub target: Vec<u32>,
}

/// Builds training pairs from labeled records, each with its own event's
/// descriptor.
pub fn prepare_examples(
    records: &[CrisisRecord],
    registry: &EventRegistry,
    scenario: Scenario,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Result<Vec<Example>> {
    for word in ["yes", "no"] {
        if vocab.id(word).is_none() {
            return Err(TrainError::MissingLabelToken(word));
        }
    }
    records
        .iter()
        .map(|r| {
            let label = r.unified_label.ok_or_else(|| CorpusError::MissingLabel(r.id.clone()))?;
            let input = construct(r, scenario, registry.get(&r.event_id)?)?;
            let src = vocab.encode_input(&input, config.max_src_len, false)?.ids;
            let target = vocab.encode(target_text(label), config.max_tgt_len, false)?.ids;
            Ok(Example { src, target })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Parameters plus optimizer state: everything a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub params: ParameterStore<T>,
    pub optimizer: OptimizerState<T>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(params: ParameterStore<T>) -> Self {
        let optimizer = OptimizerState::new(&params);
        TrainState { params, optimizer }
    }

    /// Optimizer steps taken so far.
    pub fn step(&self) -> usize {
        self.optimizer.t as usize
    }
}

/// Example indices of epoch `epoch`, in training order.
pub fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    rng::shuffle(&mut order, &mut rng::seeded(derive_seed(seed, &[0x0e, epoch as u64])));
    order
}

/// Example indices consumed by global optimizer step `step`.
pub fn batch_indices(config: &TrainConfig, n: usize, step: usize) -> Vec<usize> {
    let spe = config.steps_per_epoch(n);
    let (epoch, b) = (step / spe, step % spe);
    let order = epoch_order(config.seed, epoch, n);
    let end = ((b + 1) * config.effective_batch).min(n);
    order[b * config.effective_batch..end].to_vec()
}

struct ExampleGrad<T> {
    loss_sum: f64,
    tokens: usize,
    grads: BTreeMap<String, Tensor<T>>,
}

fn example_gradient<T: Scalar>(params: &ParameterStore<T>, ex: &Example, dropout_seed: u64) -> Result<ExampleGrad<T>> {
    let mut tape = Tape::new();
    let mut fwd = Forward::bind(&mut tape, params, Mode::Train { seed: dropout_seed }, true);
    let mask = vec![1u8; ex.src.len()];
    let mean = fwd.loss(&ex.src, &mask, &ex.target)?;
    let tokens = ex.target.iter().filter(|&&t| t != crate::tokenizer::PAD).count();
    let total = tape
        .scale(mean, T::from_f64_lossy(tokens as f64))
        .map_err(ModelError::from)?;
    let loss_sum = tape.value(total).map_err(ModelError::from)?.data()[0]
        .to_f64()
        .unwrap_or(f64::NAN);
    let grads = tape.backward(total).map_err(ModelError::from)?.into_named();
    Ok(ExampleGrad {
        loss_sum,
        tokens,
        grads,
    })
}

/// Loss and token-averaged gradient of one effective batch.
///
/// Micro-batches of `config.micro_batch()` examples are evaluated with
/// `exec`; per-example gradients are then added in batch order.
pub fn batch_gradient<T: Scalar>(
    params: &ParameterStore<T>,
    examples: &[Example],
    indices: &[usize],
    config: &TrainConfig,
    step: usize,
    exec: Execution,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let mut acc: BTreeMap<String, Tensor<T>> = params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape().to_vec())))
        .collect();
    let (mut loss_sum, mut tokens) = (0.0f64, 0usize);
    for micro in indices.chunks(config.micro_batch().max(1)) {
        let results = exec.map(micro, |&i| {
            example_gradient(
                params,
                &examples[i],
                derive_seed(config.seed, &[0xd0, step as u64, i as u64]),
            )
        });
        for r in results {
            let r = r?;
            loss_sum += r.loss_sum;
            tokens += r.tokens;
            for (name, g) in r.grads {
                let slot = acc
                    .get_mut(&name)
                    .ok_or_else(|| TrainError::StateMismatch(name.clone()))?;
                if slot.len() != g.len() {
                    return Err(TrainError::StateMismatch(name));
                }
                for (a, b) in slot.data_mut().iter_mut().zip(g.data()) {
                    *a = *a + *b;
                }
            }
        }
    }
    let denom = tokens.max(1) as f64;
    let inv = T::from_f64_lossy(1.0 / denom);
    for t in acc.values_mut() {
        for v in t.data_mut() {
            *v = *v * inv;
        }
    }
    Ok((loss_sum / denom, acc))
}

/// Runs optimizer steps `steps` (global indices) on `state`.
pub fn run_steps<T: Scalar>(
    state: &mut TrainState<T>,
    examples: &[Example],
    config: &TrainConfig,
    steps: Range<usize>,
    exec: Execution,
) -> Result<Vec<StepRecord>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let total = config.total_steps(examples.len());
    if steps.end > total {
        return Err(TrainError::StepRange { step: steps.end, total });
    }
    if state.step() != steps.start {
        return Err(TrainError::Config(format!(
            "state is at step {} but run starts at {}",
            state.step(),
            steps.start
        )));
    }
    let mut history = Vec::with_capacity(steps.len());
    for step in steps {
        let lr = lr_at(step, total, config.warmup_ratio, config.peak_lr)?;
        let indices = batch_indices(config, examples.len(), step);
        let (loss, grads) = batch_gradient(&state.params, examples, &indices, config, step, exec)?;
        adam_step(&mut state.params, &grads, &mut state.optimizer, lr, &config.adam)?;
        history.push(StepRecord { step, lr, loss });
    }
    Ok(history)
}

/// Trains from scratch state for `config.epochs` epochs.
pub fn train<T: Scalar>(
    params: ParameterStore<T>,
    examples: &[Example],
    config: &TrainConfig,
    exec: Execution,
) -> Result<(TrainState<T>, Vec<StepRecord>)> {
    let mut state = TrainState::new(params);
    let total = config.total_steps(examples.len());
    let history = run_steps(&mut state, examples, config, 0..total, exec)?;
    Ok((state, history))
}

/// History as CSV with a `step,lr,loss` header.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for r in history {
        out.push_str(&format!("{},{:e},{:e}\n", r.step, r.lr, r.loss));
    }
    out
}

#[cfg(test)]
mod tests;
