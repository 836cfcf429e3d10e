//! Encoder-decoder transformer.
//!
//! Pre-norm residual blocks, absolute sinusoidal positions, one token
//! embedding table shared by encoder and decoder inputs, and a separate
//! output projection. The decoder starts from the PAD id and predicts the
//! target shifted by one.

mod config;
mod forward;
mod gradcheck;
mod params;

pub use config::ModelConfig;
pub use forward::{Forward, Mode};
pub use gradcheck::{check_model_gradients, check_model_gradients_with, GradientReport, WorstCoordinate};
pub use params::{ParameterStore, Partition};

use thiserror::Error;

use crate::tensor::{Scalar, Tape, Tensor, TensorError};
use crate::tokenizer::{EOS, PAD};

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("{what} length {len} exceeds limit {max}")]
    Length { what: &'static str, len: usize, max: usize },
    #[error("source mask length {mask} does not match {ids} ids")]
    MaskLength { ids: usize, mask: usize },
    #[error("no attendable source positions")]
    NoAttendableSource,
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("target must end with EOS")]
    MissingEos,
    #[error("missing parameter {0:?}")]
    MissingParameter(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Encoder states `[src_len, d_model]` in evaluation mode.
pub fn encode_source<T: Scalar>(params: &ParameterStore<T>, src_ids: &[u32], src_mask: &[u8]) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let mut fwd = Forward::bind(&mut tape, params, Mode::Eval, false);
    let states = fwd.encode(src_ids, src_mask)?;
    Ok(tape.value(states)?.clone())
}

/// Next-token logits `[prefix_len, V]` given encoder states.
pub fn decode_logits<T: Scalar>(
    params: &ParameterStore<T>,
    encoder_states: &Tensor<T>,
    src_mask: &[u8],
    prefix_ids: &[u32],
) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let mut fwd = Forward::bind(&mut tape, params, Mode::Eval, false);
    let enc = fwd.tape().constant(encoder_states.clone());
    let logits = fwd.decode(enc, src_mask, prefix_ids)?;
    Ok(tape.value(logits)?.clone())
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding: argmax per step until EOS or `max_tgt_len` tokens.
pub fn generate_greedy<T: Scalar>(params: &ParameterStore<T>, src_ids: &[u32], src_mask: &[u8]) -> Result<Vec<u32>> {
    let states = encode_source(params, src_ids, src_mask)?;
    let max = params.config().max_tgt_len;
    let vocab = params.config().vocab_size;
    let mut prefix = vec![PAD];
    let mut out = Vec::new();
    while out.len() < max {
        let logits = decode_logits(params, &states, src_mask, &prefix)?;
        let last = &logits.data()[(prefix.len() - 1) * vocab..prefix.len() * vocab];
        let tok = argmax(last) as u32;
        out.push(tok);
        if tok == EOS {
            break;
        }
        prefix.push(tok);
    }
    Ok(out)
}

/// Per-position log-probabilities of `target` (teacher-forced).
pub fn target_log_probs<T: Scalar>(
    params: &ParameterStore<T>,
    encoder_states: &Tensor<T>,
    src_mask: &[u8],
    target_ids: &[u32],
) -> Result<Vec<f64>> {
    if target_ids.is_empty() {
        return Err(ModelError::Empty("target"));
    }
    let vocab = params.config().vocab_size;
    let prefix = shift_right(target_ids);
    let logits = decode_logits(params, encoder_states, src_mask, &prefix)?;
    Ok(target_ids
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row: Vec<f64> = logits.data()[i * vocab..(i + 1) * vocab]
                .iter()
                .map(|v| v.to_f64().unwrap_or(f64::NAN))
                .collect();
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            row[t as usize] - lse
        })
        .collect())
}

/// Total log-probability of `target_ids`, which must end with EOS.
pub fn score_sequence<T: Scalar>(
    params: &ParameterStore<T>,
    src_ids: &[u32],
    src_mask: &[u8],
    target_ids: &[u32],
) -> Result<f64> {
    if target_ids.last() != Some(&EOS) {
        return Err(ModelError::MissingEos);
    }
    let states = encode_source(params, src_ids, src_mask)?;
    Ok(target_log_probs(params, &states, src_mask, target_ids)?.iter().sum())
}

/// Decoder input for teacher forcing: PAD followed by all but the last target id.
pub fn shift_right(target_ids: &[u32]) -> Vec<u32> {
    let mut prefix = Vec::with_capacity(target_ids.len());
    prefix.push(PAD);
    prefix.extend_from_slice(&target_ids[..target_ids.len().saturating_sub(1)]);
    prefix
}

#[cfg(test)]
mod tests;
