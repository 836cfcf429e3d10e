//! Label prediction, metrics, adaptation matrices and plan enumeration.

mod matrix;
mod plans;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Label};
use crate::exec::Execution;
use crate::model::{generate_greedy, score_sequence, ModelError, ParameterStore};
use crate::prompt::AugmentedInput;
use crate::tensor::Scalar;
use crate::tokenizer::{TokenizerError, Vocabulary};

pub use matrix::{
    build_adaptation_matrix, pearson, pearson_row_correlation, AdaptationMatrix, CellJob, CellRun, CellRunner,
    Correlation, DiagonalMode,
};
pub use plans::{plan_leave_one_out, plan_many_to_one, LeaveOneOut, PlanSpec};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and gold lengths differ ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("model vocabulary size {model} does not match vocabulary of {vocab} tokens")]
    VocabMismatch { model: usize, vocab: usize },
    #[error("vocabulary has no {0:?} token")]
    MissingLabelToken(&'static str),
    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        what: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("matrix is incomplete: {0}")]
    Incomplete(String),
    #[error("unknown metric {0:?} (expected accuracy or weighted_f1)")]
    UnknownMetric(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// A predicted label and whether constrained scoring had to decide it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: Label,
    pub used_fallback: bool,
    pub generated: String,
}

/// Greedy generation, mapped to a label by exact match. Anything other than
/// `yes` or `no` falls back to comparing the scores of `yes </s>` and
/// `no </s>`; a tie goes to `no`.
pub fn predict_label<T: Scalar>(
    params: &ParameterStore<T>,
    vocab: &Vocabulary,
    input: &AugmentedInput,
    max_src_len: usize,
) -> Result<Prediction> {
    if params.config().vocab_size != vocab.len() {
        return Err(EvalError::VocabMismatch {
            model: params.config().vocab_size,
            vocab: vocab.len(),
        });
    }
    let src = vocab.encode_input(input, max_src_len, false)?.ids;
    let mask = vec![1u8; src.len()];
    let generated = vocab.decode(&generate_greedy(params, &src, &mask)?)?;
    if let Ok(label) = generated.parse::<Label>() {
        return Ok(Prediction {
            label,
            used_fallback: false,
            generated,
        });
    }
    let id = |w: &'static str| vocab.id(w).ok_or(EvalError::MissingLabelToken(w));
    let eos = crate::tokenizer::EOS;
    let yes = score_sequence(params, &src, &mask, &[id("yes")?, eos])?;
    let no = score_sequence(params, &src, &mask, &[id("no")?, eos])?;
    let label = if yes > no { Label::Yes } else { Label::No };
    Ok(Prediction {
        label,
        used_fallback: true,
        generated,
    })
}

/// [`predict_label`] over many inputs; results keep input order.
pub fn predict_batch<T: Scalar>(
    params: &ParameterStore<T>,
    vocab: &Vocabulary,
    inputs: &[AugmentedInput],
    max_src_len: usize,
    exec: Execution,
) -> Result<Vec<Prediction>> {
    exec.map(inputs, |input| predict_label(params, vocab, input, max_src_len))
        .into_iter()
        .collect()
}

pub fn fallback_rate(preds: &[Prediction]) -> f64 {
    if preds.is_empty() {
        return 0.0;
    }
    preds.iter().filter(|p| p.used_fallback).count() as f64 / preds.len() as f64
}

fn check_lengths(preds: &[Label], golds: &[Label]) -> Result<()> {
    if preds.len() != golds.len() {
        return Err(EvalError::LengthMismatch {
            preds: preds.len(),
            golds: golds.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn accuracy(preds: &[Label], golds: &[Label]) -> Result<f64> {
    check_lengths(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Counts indexed `[gold][pred]` in [`Label::ALL`] order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[usize; 2]; 2],
}

fn index(l: Label) -> usize {
    Label::ALL.iter().position(|&x| x == l).expect("label in ALL")
}

impl Confusion {
    pub fn from_labels(preds: &[Label], golds: &[Label]) -> Result<Self> {
        check_lengths(preds, golds)?;
        let mut counts = [[0; 2]; 2];
        for (p, g) in preds.iter().zip(golds) {
            counts[index(*g)][index(*p)] += 1;
        }
        Ok(Confusion { counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn get(&self, gold: Label, pred: Label) -> usize {
        self.counts[index(gold)][index(pred)]
    }

    pub fn accuracy(&self) -> f64 {
        let hits: usize = (0..2).map(|i| self.counts[i][i]).sum();
        hits as f64 / self.total().max(1) as f64
    }

    pub fn class_scores(&self, class: Label) -> ClassScores {
        let c = index(class);
        let tp = self.counts[c][c];
        let fp: usize = (0..2).filter(|&g| g != c).map(|g| self.counts[g][c]).sum();
        let fn_: usize = (0..2).filter(|&p| p != c).map(|p| self.counts[c][p]).sum();
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            support: tp + fn_,
        }
    }

    /// Support-weighted mean of per-class F1.
    pub fn weighted_f1(&self) -> f64 {
        let n = self.total().max(1) as f64;
        Label::ALL
            .iter()
            .map(|&l| {
                let s = self.class_scores(l);
                s.support as f64 / n * s.f1
            })
            .sum()
    }

    /// `gold,pred,count` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold,pred,count\n");
        for g in Label::ALL {
            for p in Label::ALL {
                out.push_str(&format!("{g},{p},{}\n", self.get(g, p)));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Weighted F1 with its per-class breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedF1 {
    pub value: f64,
    pub per_class: BTreeMap<Label, ClassScores>,
}

pub fn weighted_f1(preds: &[Label], golds: &[Label]) -> Result<WeightedF1> {
    let c = Confusion::from_labels(preds, golds)?;
    Ok(WeightedF1 {
        value: c.weighted_f1(),
        per_class: Label::ALL.iter().map(|&l| (l, c.class_scores(l))).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Accuracy,
    WeightedF1,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::WeightedF1 => "weighted_f1",
        }
    }

    pub fn of(self, confusion: &Confusion) -> f64 {
        match self {
            Metric::Accuracy => confusion.accuracy(),
            Metric::WeightedF1 => confusion.weighted_f1(),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "weighted_f1" => Ok(Metric::WeightedF1),
            other => Err(EvalError::UnknownMetric(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plan_id: String,
    pub metric: Metric,
    pub value: f64,
    pub per_class: BTreeMap<Label, ClassScores>,
    pub confusion: Confusion,
    pub fallback_rate: f64,
    pub examples: usize,
}

impl EvalReport {
    pub fn new(plan_id: &str, metric: Metric, preds: &[Prediction], golds: &[Label]) -> Result<Self> {
        let labels: Vec<Label> = preds.iter().map(|p| p.label).collect();
        let confusion = Confusion::from_labels(&labels, golds)?;
        Ok(EvalReport {
            plan_id: plan_id.to_string(),
            metric,
            value: metric.of(&confusion),
            per_class: Label::ALL.iter().map(|&l| (l, confusion.class_scores(l))).collect(),
            confusion,
            fallback_rate: fallback_rate(preds),
            examples: golds.len(),
        })
    }
}

#[cfg(test)]
mod tests;
