use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};

use super::{ModelConfig, ModelError, Result};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Which half of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Partition {
    /// Encoder weights, including the shared token embedding.
    Encoder,
    Decoder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Init {
    Normal,
    Zeros,
    Ones,
}

fn push_norm(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    out.push((format!("{name}.gain"), vec![d], Init::Ones));
    out.push((format!("{name}.bias"), vec![d], Init::Zeros));
}

fn push_attn(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize) {
    for w in ["q", "k", "v", "o"] {
        out.push((format!("{name}.w{w}"), vec![d, d], Init::Normal));
        // A key bias only shifts every score in a row equally, so it has no effect.
        if w != "k" {
            out.push((format!("{name}.b{w}"), vec![d], Init::Zeros));
        }
    }
}

fn push_ff(out: &mut Vec<(String, Vec<usize>, Init)>, name: &str, d: usize, f: usize) {
    out.push((format!("{name}.w1"), vec![d, f], Init::Normal));
    out.push((format!("{name}.b1"), vec![f], Init::Zeros));
    out.push((format!("{name}.w2"), vec![f, d], Init::Normal));
    out.push((format!("{name}.b2"), vec![d], Init::Zeros));
}

/// Every parameter name, shape and initializer for `config`.
pub(crate) fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
    let mut out = vec![("encoder.embed_tokens".to_string(), vec![v, d], Init::Normal)];
    for i in 0..config.n_encoder_layers {
        let p = format!("encoder.layers.{i}");
        push_norm(&mut out, &format!("{p}.attn_norm"), d);
        push_attn(&mut out, &format!("{p}.self_attn"), d);
        push_norm(&mut out, &format!("{p}.ff_norm"), d);
        push_ff(&mut out, &format!("{p}.ff"), d, f);
    }
    push_norm(&mut out, "encoder.final_norm", d);
    for i in 0..config.n_decoder_layers {
        let p = format!("decoder.layers.{i}");
        push_norm(&mut out, &format!("{p}.self_attn_norm"), d);
        push_attn(&mut out, &format!("{p}.self_attn"), d);
        push_norm(&mut out, &format!("{p}.cross_attn_norm"), d);
        push_attn(&mut out, &format!("{p}.cross_attn"), d);
        push_norm(&mut out, &format!("{p}.ff_norm"), d);
        push_ff(&mut out, &format!("{p}.ff"), d, f);
    }
    push_norm(&mut out, "decoder.final_norm", d);
    out.push(("decoder.lm_head.weight".to_string(), vec![d, v], Init::Normal));
    out.push(("decoder.lm_head.bias".to_string(), vec![v], Init::Zeros));
    out
}

/// Named model tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterStore<T> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    /// Weights from Normal(0, 0.02), biases 0, norm gains 1.
    ///
    /// Values are drawn in layout order from one seeded stream, so a
    /// `(config, seed)` pair always gives the same store.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::init_with_std(config, seed, 0.02)
    }

    pub fn init_with_std(config: &ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let normal = Normal::new(0.0, std).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut stream = rng::seeded(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, init) in layout(config) {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match init {
                Init::Normal => (0..n).map(|_| T::from_f64_lossy(normal.sample(&mut stream))).collect(),
                Init::Zeros => vec![T::zero(); n],
                Init::Ones => vec![T::one(); n],
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(ParameterStore {
            config: config.clone(),
            tensors,
        })
    }

    /// Rebuilds a store, checking names and shapes against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (name, shape, _) in &expected {
            let t = tensors
                .get(name)
                .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(ParameterStore { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn partition(name: &str) -> Partition {
        if name.starts_with("encoder.") {
            Partition::Encoder
        } else {
            Partition::Decoder
        }
    }

    pub fn cast<U: Scalar>(&self) -> ParameterStore<U> {
        ParameterStore {
            config: self.config.clone(),
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}
