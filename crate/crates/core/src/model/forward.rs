use std::collections::BTreeMap;

use super::{shift_right, ModelConfig, ModelError, ParameterStore, Result};
use crate::rng::{self, SeededRng};
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::tokenizer::PAD;

/// Sinusoids are scaled to the embedding init scale so token identity is
/// not drowned out at initialization.
pub const POSITION_SCALE: f64 = 0.02;
const MASKED: f64 = -1e9;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout off.
    Eval,
    /// Dropout on, driven by a stream seeded with `seed`.
    Train { seed: u64 },
}

/// One forward pass recorded on a tape.
pub struct Forward<'t, T: Scalar> {
    tape: &'t mut Tape<T>,
    vars: BTreeMap<String, Var>,
    config: ModelConfig,
    dropout: Option<SeededRng>,
}

pub(crate) fn sinusoid<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        for j in 0..d {
            let pair = (j / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            let v = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            data.push(T::from_f64_lossy(POSITION_SCALE * v));
        }
    }
    Tensor::new(vec![len, d], data).expect("shape matches")
}

impl<'t, T: Scalar> Forward<'t, T> {
    /// Places every parameter on the tape, as a named trainable leaf when
    /// `track` is set and as a constant otherwise.
    pub fn bind(tape: &'t mut Tape<T>, params: &ParameterStore<T>, mode: Mode, track: bool) -> Self {
        let mut vars = BTreeMap::new();
        for (name, t) in params.iter() {
            let v = if track {
                tape.param(name.clone(), t.clone())
            } else {
                tape.constant(t.clone())
            };
            vars.insert(name.clone(), v);
        }
        Self::from_vars(tape, params.config().clone(), vars, mode)
    }

    /// Uses variables the caller already placed on `tape`.
    pub fn from_vars(tape: &'t mut Tape<T>, config: ModelConfig, vars: BTreeMap<String, Var>, mode: Mode) -> Self {
        let dropout = match mode {
            Mode::Train { seed } if config.dropout > 0.0 => Some(rng::seeded(seed)),
            _ => None,
        };
        Forward {
            tape,
            vars,
            config,
            dropout,
        }
    }

    pub fn tape(&mut self) -> &mut Tape<T> {
        self.tape
    }

    fn p(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some(rng) => Ok(self.tape.dropout(x, self.config.dropout, rng)?),
            None => Ok(x),
        }
    }

    fn norm(&mut self, x: Var, name: &str) -> Result<Var> {
        let g = self.p(&format!("{name}.gain"))?;
        let b = self.p(&format!("{name}.bias"))?;
        Ok(self.tape.layer_norm(x, g, b, T::from_f64_lossy(NORM_EPS))?)
    }

    fn linear(&mut self, x: Var, w: &str, b: &str) -> Result<Var> {
        let (w, b) = (self.p(w)?, self.p(b)?);
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add(y, b)?)
    }

    fn attention(&mut self, name: &str, q_in: Var, kv_in: Var, mask: Var) -> Result<Var> {
        let (h, dh, d) = (self.config.n_heads, self.config.head_dim(), self.config.d_model);
        let lq = self.tape.value(q_in)?.shape()[0];
        let lk = self.tape.value(kv_in)?.shape()[0];
        let q = self.linear(q_in, &format!("{name}.wq"), &format!("{name}.bq"))?;
        let wk = self.p(&format!("{name}.wk"))?;
        let k = self.tape.matmul(kv_in, wk)?;
        let v = self.linear(kv_in, &format!("{name}.wv"), &format!("{name}.bv"))?;
        let t = &mut *self.tape;
        let q = t.reshape(q, &[lq, h, dh])?;
        let q = t.permute(q, &[1, 0, 2])?;
        let k = t.reshape(k, &[lk, h, dh])?;
        let k = t.permute(k, &[1, 2, 0])?;
        let v = t.reshape(v, &[lk, h, dh])?;
        let v = t.permute(v, &[1, 0, 2])?;
        let scores = t.matmul(q, k)?;
        let scores = t.scale(scores, T::from_f64_lossy(1.0 / (dh as f64).sqrt()))?;
        let scores = t.add(scores, mask)?;
        let probs = t.softmax(scores, 2)?;
        let ctx = t.matmul(probs, v)?;
        let ctx = t.permute(ctx, &[1, 0, 2])?;
        let ctx = t.reshape(ctx, &[lq, d])?;
        self.linear(ctx, &format!("{name}.wo"), &format!("{name}.bo"))
    }

    fn feed_forward(&mut self, name: &str, x: Var) -> Result<Var> {
        let h = self.linear(x, &format!("{name}.w1"), &format!("{name}.b1"))?;
        let h = self.tape.gelu(h)?;
        let h = self.drop(h)?;
        self.linear(h, &format!("{name}.w2"), &format!("{name}.b2"))
    }

    fn residual(&mut self, x: Var, sub: Var) -> Result<Var> {
        let sub = self.drop(sub)?;
        Ok(self.tape.add(x, sub)?)
    }

    fn embed(&mut self, ids: &[u32]) -> Result<Var> {
        let table = self.p("encoder.embed_tokens")?;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let x = self.tape.gather(table, &idx)?;
        let pe = self.tape.constant(sinusoid(ids.len(), self.config.d_model));
        let x = self.tape.add(x, pe)?;
        self.drop(x)
    }

    fn key_mask(&mut self, src_mask: &[u8]) -> Var {
        let data: Vec<f64> = src_mask.iter().map(|&m| if m == 1 { 0.0 } else { MASKED }).collect();
        self.tape
            .constant(Tensor::from_f64(vec![1, src_mask.len()], &data).expect("shape matches"))
    }

    fn check_source(&self, src_ids: &[u32], src_mask: &[u8]) -> Result<()> {
        if src_ids.is_empty() {
            return Err(ModelError::Empty("source"));
        }
        if src_ids.len() > self.config.max_src_len {
            return Err(ModelError::Length {
                what: "source",
                len: src_ids.len(),
                max: self.config.max_src_len,
            });
        }
        if src_mask.len() != src_ids.len() {
            return Err(ModelError::MaskLength {
                ids: src_ids.len(),
                mask: src_mask.len(),
            });
        }
        if !src_mask.contains(&1) {
            return Err(ModelError::NoAttendableSource);
        }
        Ok(())
    }

    /// Encoder states `[src_len, d_model]`.
    pub fn encode(&mut self, src_ids: &[u32], src_mask: &[u8]) -> Result<Var> {
        self.check_source(src_ids, src_mask)?;
        let mask = self.key_mask(src_mask);
        let mut x = self.embed(src_ids)?;
        for i in 0..self.config.n_encoder_layers {
            let p = format!("encoder.layers.{i}");
            let h = self.norm(x, &format!("{p}.attn_norm"))?;
            let a = self.attention(&format!("{p}.self_attn"), h, h, mask)?;
            x = self.residual(x, a)?;
            let h = self.norm(x, &format!("{p}.ff_norm"))?;
            let f = self.feed_forward(&format!("{p}.ff"), h)?;
            x = self.residual(x, f)?;
        }
        self.norm(x, "encoder.final_norm")
    }

    /// Logits `[prefix_len, V]`; position `i` sees prefix positions `<= i`.
    pub fn decode(&mut self, encoder_states: Var, src_mask: &[u8], prefix_ids: &[u32]) -> Result<Var> {
        if prefix_ids.is_empty() {
            return Err(ModelError::Empty("decoder prefix"));
        }
        if prefix_ids.len() > self.config.max_tgt_len {
            return Err(ModelError::Length {
                what: "decoder prefix",
                len: prefix_ids.len(),
                max: self.config.max_tgt_len,
            });
        }
        let src_len = self.tape.value(encoder_states)?.shape()[0];
        if src_mask.len() != src_len {
            return Err(ModelError::MaskLength {
                ids: src_len,
                mask: src_mask.len(),
            });
        }
        if !src_mask.contains(&1) {
            return Err(ModelError::NoAttendableSource);
        }
        let n = prefix_ids.len();
        let causal: Vec<f64> = (0..n * n).map(|k| if k % n <= k / n { 0.0 } else { MASKED }).collect();
        let causal = self
            .tape
            .constant(Tensor::from_f64(vec![n, n], &causal).expect("shape matches"));
        let cross = self.key_mask(src_mask);
        let mut y = self.embed(prefix_ids)?;
        for i in 0..self.config.n_decoder_layers {
            let p = format!("decoder.layers.{i}");
            let h = self.norm(y, &format!("{p}.self_attn_norm"))?;
            let a = self.attention(&format!("{p}.self_attn"), h, h, causal)?;
            y = self.residual(y, a)?;
            let h = self.norm(y, &format!("{p}.cross_attn_norm"))?;
            let c = self.attention(&format!("{p}.cross_attn"), h, encoder_states, cross)?;
            y = self.residual(y, c)?;
            let h = self.norm(y, &format!("{p}.ff_norm"))?;
            let f = self.feed_forward(&format!("{p}.ff"), h)?;
            y = self.residual(y, f)?;
        }
        let y = self.norm(y, "decoder.final_norm")?;
        self.linear(y, "decoder.lm_head.weight", "decoder.lm_head.bias")
    }

    /// Teacher-forced mean token cross-entropy of `target_ids`.
    pub fn loss(&mut self, src_ids: &[u32], src_mask: &[u8], target_ids: &[u32]) -> Result<Var> {
        if target_ids.is_empty() {
            return Err(ModelError::Empty("target"));
        }
        let enc = self.encode(src_ids, src_mask)?;
        let logits = self.decode(enc, src_mask, &shift_right(target_ids))?;
        let targets: Vec<usize> = target_ids.iter().map(|&t| t as usize).collect();
        Ok(self.tape.cross_entropy(logits, &targets, PAD as usize)?)
    }
}
