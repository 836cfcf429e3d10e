use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_encoder_layers: usize,
    pub n_decoder_layers: usize,
    pub dropout: f64,
    pub max_src_len: usize,
    pub max_tgt_len: usize,
}

impl ModelConfig {
    /// 2+2 layers, d_model 64: the "small" role.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_encoder_layers: 2,
            n_decoder_layers: 2,
            dropout: 0.1,
            max_src_len: 128,
            max_tgt_len: 10,
        }
    }

    /// 4+4 layers, d_model 128: the "base" role.
    pub fn mini(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 128,
            d_ff: 512,
            n_encoder_layers: 4,
            n_decoder_layers: 4,
            ..Self::tiny(vocab_size)
        }
    }

    /// Preset by name (`tiny` or `mini`).
    pub fn preset(name: &str, vocab_size: usize) -> Option<Self> {
        match name {
            "tiny" => Some(Self::tiny(vocab_size)),
            "mini" => Some(Self::mini(vocab_size)),
            _ => None,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size < 3 {
            return bad(format!("vocab_size {} leaves no room beyond specials", self.vocab_size));
        }
        if self.n_heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.d_ff == 0 {
            return bad("d_ff must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.max_src_len < 2 || self.max_tgt_len < 1 {
            return bad("sequence limits too small".into());
        }
        Ok(())
    }

    /// Closed-form parameter count.
    pub fn parameter_count(&self) -> usize {
        let (v, d, f) = (self.vocab_size, self.d_model, self.d_ff);
        let norm = 2 * d;
        let attn = 4 * d * d + 3 * d;
        let ff = d * f + f + f * d + d;
        let enc_layer = norm + attn + norm + ff;
        let dec_layer = norm + attn + norm + attn + norm + ff;
        v * d + self.n_encoder_layers * enc_layer + norm + self.n_decoder_layers * dec_layer + norm + d * v + v
    }
}
