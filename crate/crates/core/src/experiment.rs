//! Runs adaptation plans end to end: vocabulary, training, evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compose_plan, CorpusError, CorpusLayout, CrisisRecord, EventRegistry, EventSplit, LayoutKind};
use crate::eval::{
    build_adaptation_matrix, predict_batch, AdaptationMatrix, CellJob, CellRun, DiagonalMode, EvalError, EvalReport,
    Metric, PlanSpec,
};
use crate::exec::Execution;
use crate::model::{ModelConfig, ModelError, ParameterStore};
use crate::prompt::{construct, template_words, PromptError, Scenario};
use crate::rng::derive_seed;
use crate::tokenizer::{TokenizerError, Vocabulary, DEFAULT_MAX_SIZE, DEFAULT_MIN_FREQ};
use crate::train::{prepare_examples, save_checkpoint, train, StepRecord, TrainConfig, TrainError, TrainState};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown model preset {0:?} (expected tiny or mini)")]
    UnknownPreset(String),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, ExperimentError>;

fn default_model() -> String {
    "tiny".into()
}
fn default_scenario() -> Scenario {
    Scenario::PostQ
}
fn default_min_freq() -> usize {
    DEFAULT_MIN_FREQ
}
fn default_max_size() -> usize {
    DEFAULT_MAX_SIZE
}

/// Everything besides data that determines a run. `{}` is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_scenario")]
    pub scenario: Scenario,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "default_min_freq")]
    pub min_freq: usize,
    #[serde(default = "default_max_size")]
    pub max_vocab: usize,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl ExperimentConfig {
    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.model, vocab_size)
            .ok_or_else(|| ExperimentError::UnknownPreset(self.model.clone()))?;
        cfg.max_src_len = self.train.max_src_len;
        cfg.max_tgt_len = self.train.max_tgt_len;
        Ok(cfg)
    }
}

/// Tokens every vocabulary must contain: template words, label words and the
/// event phrase words of every registered event.
pub fn forced_tokens(registry: &EventRegistry) -> Vec<String> {
    let mut out: Vec<String> = template_words().iter().map(|s| s.to_string()).collect();
    out.extend(["yes".to_string(), "no".to_string()]);
    for e in registry.iter() {
        out.extend(e.location_name.split_whitespace().map(String::from));
        out.extend(e.crisis_name.split_whitespace().map(String::from));
    }
    out
}

/// Vocabulary over the constructed inputs of `records` (each with its own
/// event's descriptor) plus [`forced_tokens`].
pub fn build_vocabulary(
    records: &[CrisisRecord],
    registry: &EventRegistry,
    scenario: Scenario,
    min_freq: usize,
    max_size: usize,
) -> Result<Vocabulary> {
    let texts = records
        .iter()
        .map(|r| Ok(construct(r, scenario, registry.get(&r.event_id)?)?.text))
        .collect::<Result<Vec<String>>>()?;
    let forced = forced_tokens(registry);
    let forced: Vec<&str> = forced.iter().map(String::as_str).collect();
    Ok(Vocabulary::build(&texts, min_freq, max_size, &forced)?)
}

/// Evaluates `params` on `records`, building each input with the descriptor
/// of `target`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_records(
    params: &ParameterStore<f32>,
    vocab: &Vocabulary,
    registry: &EventRegistry,
    target: &str,
    records: &[CrisisRecord],
    scenario: Scenario,
    metric: Metric,
    plan_id: &str,
    max_src_len: usize,
    exec: Execution,
) -> Result<EvalReport> {
    let descriptor = registry.get(target)?;
    let inputs = records
        .iter()
        .map(|r| construct(r, scenario, descriptor))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let golds = records
        .iter()
        .map(|r| r.unified_label.ok_or_else(|| CorpusError::MissingLabel(r.id.clone())))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let preds = predict_batch(params, vocab, &inputs, max_src_len, exec)?;
    Ok(EvalReport::new(plan_id, metric, &preds, &golds)?)
}

/// Which run to perform.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSpec {
    pub sources: Vec<String>,
    pub target: String,
    /// Fold of an in-domain run on a cross-validation layout.
    pub fold: Option<usize>,
    pub seed: u64,
}

impl RunSpec {
    pub fn plan_id(&self) -> String {
        format!("{}->{}", self.sources.join("+"), self.target)
    }

    pub fn is_in_domain(&self) -> bool {
        self.sources.len() == 1 && self.sources[0] == self.target
    }
}

/// Result of one trained and evaluated plan.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub spec: RunSpec,
    pub report: EvalReport,
    pub history: Vec<StepRecord>,
    pub state: TrainState<f32>,
    pub vocab: Vocabulary,
    pub train_config: TrainConfig,
    pub model_config: ModelConfig,
    pub train_examples: usize,
}

impl RunOutcome {
    /// Writes `checkpoint.castckpt`, `vocab.txt`, `history.csv`,
    /// `report.json` and `confusion.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |path: &Path, e: &dyn std::fmt::Display| ExperimentError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
        save_checkpoint(
            &self.state,
            &self.vocab.hash_hex(),
            self.train_config.seed,
            &dir.join("checkpoint.castckpt"),
        )?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        let history = dir.join("history.csv");
        std::fs::write(&history, crate::train::history_csv(&self.history)).map_err(|e| io(&history, &e))?;
        let report = dir.join("report.json");
        let json = serde_json::to_string_pretty(&self.report).expect("report serializes");
        std::fs::write(&report, json).map_err(|e| io(&report, &e))?;
        let confusion = dir.join("confusion.csv");
        std::fs::write(&confusion, self.report.confusion.to_csv()).map_err(|e| io(&confusion, &e))?;
        Ok(())
    }
}

/// Training and test records of `spec` on `layout`.
pub fn run_data(layout: &CorpusLayout, spec: &RunSpec) -> Result<(Vec<CrisisRecord>, Vec<CrisisRecord>)> {
    if spec.is_in_domain() {
        let split: EventSplit = layout.in_domain_split(&spec.target, spec.fold.unwrap_or(0))?;
        return Ok((split.train, split.test));
    }
    if spec.fold.is_some() {
        return Err(CorpusError::Folds(format!("fold given for cross-domain plan {}", spec.plan_id())).into());
    }
    let plan = compose_plan(
        "cross_domain",
        &spec.sources,
        &spec.target,
        Scenario::Standard,
        &layout.cross_domain_splits(),
        derive_seed(spec.seed, &[2]),
    )?;
    Ok((plan.source_data, plan.target_test))
}

/// Builds the vocabulary, trains from a fresh initialization and evaluates.
pub fn run_plan(
    layout: &CorpusLayout,
    spec: &RunSpec,
    config: &ExperimentConfig,
    exec: Execution,
) -> Result<RunOutcome> {
    let (train_records, test_records) = run_data(layout, spec)?;
    let vocab = build_vocabulary(
        &train_records,
        &layout.registry,
        config.scenario,
        config.min_freq,
        config.max_vocab,
    )?;
    let train_config = TrainConfig {
        seed: spec.seed,
        ..config.train.clone()
    };
    let model_config = config.model_config(vocab.len())?;
    let examples = prepare_examples(&train_records, &layout.registry, config.scenario, &vocab, &train_config)?;
    let params = ParameterStore::<f32>::init(&model_config, derive_seed(spec.seed, &[1]))?;
    let (state, history) = train(params, &examples, &train_config, exec)?;
    let report = evaluate_records(
        &state.params,
        &vocab,
        &layout.registry,
        &spec.target,
        &test_records,
        config.scenario,
        config.metric,
        &spec.plan_id(),
        train_config.max_src_len,
        exec,
    )?;
    Ok(RunOutcome {
        spec: spec.clone(),
        report,
        history,
        state,
        vocab,
        train_config,
        model_config,
        train_examples: examples.len(),
    })
}

/// Runs a [`PlanSpec`] (e.g. leave-one-out) with a seed derived from its id.
pub fn run_plan_spec(
    layout: &CorpusLayout,
    plan: &PlanSpec,
    master_seed: u64,
    config: &ExperimentConfig,
    exec: Execution,
) -> Result<RunOutcome> {
    let spec = RunSpec {
        sources: plan.sources.clone(),
        target: plan.target.clone(),
        fold: None,
        seed: crate::rng::derive_seed_str(master_seed, &plan.id()),
    };
    let config = ExperimentConfig {
        scenario: plan.scenario,
        ..config.clone()
    };
    run_plan(layout, &spec, &config, exec)
}

pub fn diagonal_mode(layout: &CorpusLayout) -> DiagonalMode {
    match layout.kind {
        LayoutKind::CrossValidation => DiagonalMode::FiveFoldMean,
        LayoutKind::StandardSplit => DiagonalMode::StandardSplit,
    }
}

/// Full source x target matrix over every event of `layout`.
///
/// `jobs` runs cells concurrently; each training run itself is sequential
/// so results match a `jobs = Sequential` build exactly. When `out` is set,
/// every run's artifacts go to `out/runs/<run id>/`.
pub fn run_matrix(
    layout: &CorpusLayout,
    config: &ExperimentConfig,
    master_seed: u64,
    jobs: Execution,
    out: Option<&Path>,
) -> Result<AdaptationMatrix> {
    let runner = |job: &CellJob| -> std::result::Result<CellRun, String> {
        let spec = RunSpec {
            sources: vec![job.source.clone()],
            target: job.target.clone(),
            fold: job.fold,
            seed: job.seed,
        };
        let inner = if jobs.is_parallel() {
            Execution::Sequential
        } else {
            Execution::Parallel
        };
        let outcome = run_plan(layout, &spec, config, inner).map_err(|e| e.to_string())?;
        let checkpoint = match out {
            Some(dir) => {
                let run_dir = dir
                    .join("runs")
                    .join(job.run_id().replace("->", "_to_").replace('#', "_"));
                outcome.write(&run_dir).map_err(|e| e.to_string())?;
                Some(run_dir.join("checkpoint.castckpt").display().to_string())
            }
            None => None,
        };
        Ok(CellRun {
            fold: job.fold,
            seed: job.seed,
            value: outcome.report.value,
            fallback_rate: outcome.report.fallback_rate,
            checkpoint,
        })
    };
    Ok(build_adaptation_matrix(
        &layout.event_ids(),
        config.metric,
        config.scenario,
        diagonal_mode(layout),
        layout.in_domain_runs(),
        master_seed,
        &runner,
        jobs,
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::SynthSpec;

    fn layout() -> CorpusLayout {
        let spec = SynthSpec::twin_and_outlier(40, 7);
        CorpusLayout::cross_validation(spec.registry().unwrap(), spec.generate(), 5, 0).unwrap()
    }

    fn quick() -> ExperimentConfig {
        let mut c = ExperimentConfig::default();
        c.train.epochs = 1;
        c.train.max_src_len = 48;
        c.min_freq = 1;
        c
    }

    #[test]
    fn config_defaults() {
        let c = ExperimentConfig::default();
        assert_eq!(c.model, "tiny");
        assert_eq!(c.scenario, Scenario::PostQ);
        assert_eq!(c.train, TrainConfig::default());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"modle": "tiny"}"#).is_err());
        assert!(matches!(
            ExperimentConfig {
                model: "huge".into(),
                ..c
            }
            .model_config(10),
            Err(ExperimentError::UnknownPreset(_))
        ));
    }

    #[test]
    fn in_domain_and_cross_domain_data() {
        let l = layout();
        let spec = RunSpec {
            sources: vec!["A".into()],
            target: "A".into(),
            fold: Some(1),
            seed: 0,
        };
        let (train, test) = run_data(&l, &spec).unwrap();
        assert_eq!(train.len() + test.len(), 40);
        let cross = RunSpec {
            sources: vec!["A".into()],
            target: "C".into(),
            fold: None,
            seed: 0,
        };
        let (train, test) = run_data(&l, &cross).unwrap();
        assert!(train.iter().all(|r| r.event_id == "A"));
        assert!(test.iter().all(|r| r.event_id == "C"));
        assert_eq!(test.len(), 40);
    }

    #[test]
    fn vocabulary_keeps_every_event_phrase() {
        let l = layout();
        let (train, _) = run_data(
            &l,
            &RunSpec {
                sources: vec!["A".into()],
                target: "C".into(),
                fold: None,
                seed: 0,
            },
        )
        .unwrap();
        let v = build_vocabulary(&train, &l.registry, Scenario::PostQ, 2, 8192).unwrap();
        for w in ["eastmere", "earthquake", "northport", "yes", "no", "question", "?"] {
            assert!(v.id(w).is_some(), "{w}");
        }
    }

    #[test]
    fn cross_domain_inputs_use_the_target_descriptor() {
        let l = layout();
        let spec = RunSpec {
            sources: vec!["A".into()],
            target: "C".into(),
            fold: None,
            seed: 3,
        };
        let out = run_plan(&l, &spec, &quick(), Execution::Parallel).unwrap();
        assert_eq!(out.report.examples, 40);
        assert_eq!(out.report.plan_id, "A->C");
        let descriptor = l.registry.get("C").unwrap();
        let (_, test) = run_data(&l, &spec).unwrap();
        for r in &test {
            let input = construct(r, Scenario::PostQ, descriptor).unwrap();
            let ids = out.vocab.encode_input(&input, 48, false).unwrap().ids;
            let decoded = out.vocab.decode(&ids).unwrap();
            assert!(
                decoded.ends_with("is this message relevant to eastmere earthquake ?"),
                "{decoded}"
            );
        }
    }

    #[test]
    fn runs_are_reproducible_and_written() {
        let l = layout();
        let spec = RunSpec {
            sources: vec!["B".into()],
            target: "B".into(),
            fold: Some(0),
            seed: 5,
        };
        let a = run_plan(&l, &spec, &quick(), Execution::Sequential).unwrap();
        let b = run_plan(&l, &spec, &quick(), Execution::Parallel).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.state, b.state);
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        for f in ["checkpoint.castckpt", "vocab.txt", "history.csv", "report.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
