//! Word-level vocabulary and bounded encoding.
//!
//! Normalization is Unicode NFC, then lowercase, then whitespace splitting;
//! every non-alphanumeric character at the start or end of a word becomes a
//! token of its own (`"Flood!"` gives `flood`, `!`).

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::prompt::{AugmentedInput, Scenario};

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const SPECIAL_TOKENS: [&str; 3] = ["<pad>", "</s>", "<unk>"];

pub const DEFAULT_MIN_FREQ: usize = 2;
pub const DEFAULT_MAX_SIZE: usize = 8192;

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("max_size {max_size} cannot hold {needed} special and forced tokens")]
    TooSmall { max_size: usize, needed: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("token id {id} out of range for vocabulary of {size}")]
    Range { id: u32, size: usize },
    #[error("max_len must be at least 2, got {0}")]
    MaxLen(usize),
    #[error("cannot read {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed vocabulary file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TokenizerError>;

/// Splits text into normalized word tokens.
pub fn normalize(text: &str) -> Vec<String> {
    let composed: String = text.nfc().collect::<String>().to_lowercase();
    let mut out = Vec::new();
    for word in composed.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        let mut lo = 0;
        let mut hi = chars.len();
        while lo < hi && !chars[lo].is_alphanumeric() {
            lo += 1;
        }
        while hi > lo && !chars[hi - 1].is_alphanumeric() {
            hi -= 1;
        }
        out.extend(chars[..lo].iter().map(|c| c.to_string()));
        if lo < hi {
            out.push(chars[lo..hi].iter().collect());
        }
        out.extend(chars[hi..].iter().map(|c| c.to_string()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    min_freq: usize,
    max_size: usize,
    content_hash: u64,
}

/// Ids plus a 1/0 attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
}

impl Encoding {
    /// The ids before padding.
    pub fn real_ids(&self) -> &[u32] {
        let n = self.mask.iter().filter(|&&m| m == 1).count();
        &self.ids[..n]
    }
}

fn hash_tokens(tokens: &[String]) -> u64 {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update(b"\n");
    }
    let digest = h.finalize();
    u64::from_be_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl Vocabulary {
    /// Builds a vocabulary from raw texts.
    ///
    /// Specials take ids 0..3. The remaining tokens (corpus tokens seen at
    /// least `min_freq` times, plus every normalized forced token) are ranked
    /// by frequency descending, then lexicographically, and non-forced tokens
    /// are dropped from the tail until the size fits `max_size`.
    pub fn build<S: AsRef<str>>(corpus: &[S], min_freq: usize, max_size: usize, forced: &[&str]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in corpus {
            for tok in normalize(text.as_ref()) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let forced: BTreeSet<String> = forced
            .iter()
            .flat_map(|f| normalize(f))
            .filter(|t| !SPECIAL_TOKENS.contains(&t.as_str()))
            .collect();
        let needed = SPECIAL_TOKENS.len() + forced.len();
        if max_size < needed {
            return Err(TokenizerError::TooSmall { max_size, needed });
        }
        let mut ranked: Vec<(usize, String)> = counts
            .iter()
            .filter(|(t, &n)| n >= min_freq || forced.contains(*t))
            .map(|(t, &n)| (n, t.clone()))
            .collect();
        for f in &forced {
            if !counts.contains_key(f) {
                ranked.push((0, f.clone()));
            }
        }
        ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let mut budget = max_size - needed;
        let kept: Vec<String> = ranked
            .into_iter()
            .filter(|(_, t)| {
                if forced.contains(t) {
                    true
                } else if budget > 0 {
                    budget -= 1;
                    true
                } else {
                    false
                }
            })
            .map(|(_, t)| t)
            .collect();
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        tokens.extend(kept);
        Ok(Self::from_tokens(tokens, min_freq, max_size))
    }

    fn from_tokens(tokens: Vec<String>, min_freq: usize, max_size: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let content_hash = hash_tokens(&tokens);
        Vocabulary {
            tokens,
            index,
            min_freq,
            max_size,
            content_hash,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn content_hash(&self) -> u64 {
        self.content_hash
    }

    pub fn hash_hex(&self) -> String {
        format!("{:016x}", self.content_hash)
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    fn ids_of(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t).unwrap_or(UNK)).collect()
    }

    fn finish(&self, mut ids: Vec<u32>, max_len: usize, pad: bool) -> Encoding {
        ids.push(EOS);
        let mut mask = vec![1u8; ids.len()];
        if pad {
            ids.resize(max_len, PAD);
            mask.resize(max_len, 0);
        }
        Encoding { ids, mask }
    }

    /// Encodes plain text with tail truncation; EOS is always the last real id.
    pub fn encode(&self, text: &str, max_len: usize, pad: bool) -> Result<Encoding> {
        if max_len < 2 {
            return Err(TokenizerError::MaxLen(max_len));
        }
        let mut ids = self.ids_of(&normalize(text));
        ids.truncate(max_len - 1);
        Ok(self.finish(ids, max_len, pad))
    }

    /// Encodes a constructed input, truncating only the end of the message.
    ///
    /// The template prefix and the question suffix are kept whole. If they
    /// alone exceed the budget, the prefix goes first and then the suffix
    /// loses tokens from its front, so the final question mark always stays.
    pub fn encode_input(&self, input: &AugmentedInput, max_len: usize, pad: bool) -> Result<Encoding> {
        if input.scenario == Scenario::Standard {
            return self.encode(&input.text, max_len, pad);
        }
        if max_len < 2 {
            return Err(TokenizerError::MaxLen(max_len));
        }
        let budget = max_len - 1;
        let prefix = self.ids_of(&normalize(input.prefix()));
        let mut content = self.ids_of(&normalize(input.content()));
        let suffix = self.ids_of(&normalize(input.suffix()));
        let ids = if prefix.len() + suffix.len() <= budget {
            content.truncate(budget - prefix.len() - suffix.len());
            [prefix, content, suffix].concat()
        } else {
            suffix[suffix.len().saturating_sub(budget)..].to_vec()
        };
        Ok(self.finish(ids, max_len, pad))
    }

    /// Drops PAD and everything from the first EOS on; joins with spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids {
            let tok = self.token(id).ok_or(TokenizerError::Range { id, size: self.len() })?;
            if id == EOS {
                break;
            }
            if id != PAD {
                words.push(tok);
            }
        }
        Ok(words.join(" "))
    }

    /// One token per line (line order is id order) after `#!` header lines.
    pub fn to_file_string(&self) -> String {
        let mut out = format!(
            "#! min_freq={}\n#! max_size={}\n#! content_hash={}\n",
            self.min_freq,
            self.max_size,
            self.hash_hex()
        );
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse_file_string(text: &str) -> Result<Self> {
        let fmt = |m: String| TokenizerError::Format(m);
        let mut min_freq = None;
        let mut max_size = None;
        let mut hash = None;
        let mut tokens = Vec::new();
        for line in text.lines() {
            if let Some(h) = line.strip_prefix("#! ") {
                let (k, v) = h.split_once('=').ok_or_else(|| fmt(format!("bad header {line:?}")))?;
                match k {
                    "min_freq" => min_freq = Some(v.parse().map_err(|_| fmt(format!("bad min_freq {v:?}")))?),
                    "max_size" => max_size = Some(v.parse().map_err(|_| fmt(format!("bad max_size {v:?}")))?),
                    "content_hash" => {
                        hash = Some(u64::from_str_radix(v, 16).map_err(|_| fmt(format!("bad hash {v:?}")))?)
                    }
                    _ => return Err(fmt(format!("unknown header key {k:?}"))),
                }
            } else {
                tokens.push(line.to_string());
            }
        }
        if tokens.len() < SPECIAL_TOKENS.len() || tokens[..3] != SPECIAL_TOKENS {
            return Err(fmt("missing special tokens".into()));
        }
        let vocab = Self::from_tokens(
            tokens,
            min_freq.ok_or_else(|| fmt("missing min_freq".into()))?,
            max_size.ok_or_else(|| fmt("missing max_size".into()))?,
        );
        if let Some(h) = hash {
            if h != vocab.content_hash {
                return Err(fmt(format!(
                    "content hash {h:016x} does not match tokens ({})",
                    vocab.hash_hex()
                )));
            }
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_file_string()).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TokenizerError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse_file_string(&text)
    }
}
