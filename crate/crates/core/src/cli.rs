//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 incomplete experiment (some runs failed).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{CorpusError, CorpusLayout, CorpusManifest, LayoutKind};
use crate::eval::{plan_leave_one_out, EvalError, Metric};
use crate::exec::Execution;
use crate::experiment::{
    build_vocabulary, evaluate_records, run_matrix, run_plan, run_plan_spec, ExperimentConfig, ExperimentError, RunSpec,
};
use crate::model::ModelError;
use crate::prompt::Scenario;
use crate::rng::derive_seed_str;
use crate::synth::SynthSpec;
use crate::tokenizer::Vocabulary;
use crate::train::{load_checkpoint, TrainError};

pub const DATA_ENV: &str = "CAST_DATA";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INCOMPLETE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid config {path}: {message}")]
    Config { path: PathBuf, message: String },
    #[error("cannot access {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("incomplete: {0}")]
    Incomplete(String),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::Experiment(e.into())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Experiment(e.into())
    }
}

fn corpus_code(e: &CorpusError) -> i32 {
    match e {
        CorpusError::InvalidPlan(_) | CorpusError::Folds(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::Io { .. } => EXIT_DATA,
            CliError::Incomplete(_) => EXIT_INCOMPLETE,
            CliError::Experiment(e) => match e {
                ExperimentError::UnknownPreset(_) => EXIT_USAGE,
                ExperimentError::Corpus(c) => corpus_code(c),
                ExperimentError::Train(t) => match t {
                    TrainError::Config(_) | TrainError::NoDecay { .. } | TrainError::StepRange { .. } => EXIT_USAGE,
                    TrainError::Corpus(c) => corpus_code(c),
                    TrainError::Model(ModelError::Config(_)) => EXIT_USAGE,
                    _ => EXIT_DATA,
                },
                ExperimentError::Eval(EvalError::UnknownMetric(_)) => EXIT_USAGE,
                ExperimentError::Eval(EvalError::Corpus(c)) => corpus_code(c),
                ExperimentError::Model(ModelError::Config(_)) => EXIT_USAGE,
                _ => EXIT_DATA,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cast", version, about = "Event-aware seq2seq classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-event corpus.
    Synth(SynthArgs),
    /// Build a vocabulary over every record of a corpus.
    BuildVocab(BuildVocabArgs),
    /// Train one plan (or every fold of an in-domain plan).
    Train(TrainArgs),
    /// Evaluate a checkpoint on one event.
    Evaluate(EvaluateArgs),
    /// Source x target adaptation matrix plus row correlations.
    Matrix(MatrixArgs),
    /// Leave-one-out adaptation over every event.
    Loo(LooArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    /// Events A and B share a topic, C does not.
    Twin,
    /// Every event has its own topic.
    Distinct,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "twin")]
    pub kind: SynthKind,
    /// Number of events (`distinct` only).
    #[arg(long, default_value_t = 3)]
    pub events: usize,
    /// Records per event.
    #[arg(long, default_value_t = 100)]
    pub records: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Corpus manifest, or a directory containing `corpus.json`.
    #[arg(long, env = DATA_ENV, default_value = "data")]
    pub data: PathBuf,
}

impl DataArgs {
    pub fn manifest_path(&self) -> PathBuf {
        if self.data.is_dir() {
            self.data.join("corpus.json")
        } else {
            self.data.clone()
        }
    }
}

/// Config file plus per-flag overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON experiment config; omitted keys take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<Scenario>,
    #[arg(long)]
    pub metric: Option<Metric>,
    /// Model preset (`tiny` or `mini`).
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Master seed; per-run seeds derive from it and the run id.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                serde_json::from_str(&text).map_err(|e| CliError::Config {
                    path: path.clone(),
                    message: e.to_string(),
                })?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(m) = self.metric {
            cfg.metric = m;
        }
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.train.peak_lr = lr;
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output vocabulary file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Source event(s); repeat or separate with commas.
    #[arg(long, required = true, value_delimiter = ',')]
    pub source: Vec<String>,
    #[arg(long)]
    pub target: String,
    /// Fold count for in-domain cross-validation (overrides the corpus).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Run only this fold.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary file; defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub target: String,
    /// Evaluate on this fold's test portion instead of the event's test data.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Leave each row pair's own columns out of the correlation.
    #[arg(long)]
    pub correlate_exclude_self: bool,
    /// Concurrent runs; values above 1 run cells in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LooArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written as `manifest.json` in every run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Hex SHA-256 per input file.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<String>,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

fn digests(paths: &[PathBuf]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), file_sha256(p)?)))
        .collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes")
}

/// Collects what a manifest needs while a command runs.
struct Recorder {
    run_id: String,
    command: &'static str,
    config: serde_json::Value,
    inputs: Vec<PathBuf>,
    seed: u64,
    started: u64,
    artifacts: Vec<PathBuf>,
}

impl Recorder {
    fn new(command: &'static str, run_id: String, config: &ExperimentConfig, inputs: Vec<PathBuf>) -> Self {
        Recorder {
            run_id,
            command,
            config: serde_json::to_value(config).expect("config serializes"),
            inputs,
            seed: config.train.seed,
            started: unix_now(),
            artifacts: Vec::new(),
        }
    }

    fn write(&mut self, path: PathBuf, contents: impl AsRef<[u8]>) -> Result<()> {
        write_file(&path, contents)?;
        self.artifacts.push(path);
        Ok(())
    }

    fn finish(mut self, out: &Path) -> Result<RunManifest> {
        let path = out.join("manifest.json");
        self.artifacts.push(path.clone());
        let manifest = RunManifest {
            run_id: self.run_id,
            command: self.command.to_string(),
            config: self.config,
            inputs: digests(&self.inputs)?,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            artifacts: self.artifacts.iter().map(|p| p.display().to_string()).collect(),
        };
        write_file(&path, to_json(&manifest))?;
        Ok(manifest)
    }
}

/// Reads the corpus manifest, optionally overriding its fold count.
fn load_corpus(data: &DataArgs, folds: Option<usize>) -> Result<(CorpusLayout, Vec<PathBuf>)> {
    let path = data.manifest_path();
    let mut manifest = CorpusManifest::read(&path)?;
    if let Some(k) = folds {
        if manifest.layout != LayoutKind::CrossValidation {
            return Err(CliError::Usage("--folds needs a cross-validation corpus".into()));
        }
        manifest.folds = k;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let mut inputs = vec![path.clone()];
    inputs.extend(manifest.data_files(base));
    Ok((manifest.resolve(&path)?, inputs))
}

fn jobs_mode(jobs: usize) -> Result<Execution> {
    match jobs {
        0 => Err(CliError::Usage("--jobs must be at least 1".into())),
        1 => Ok(Execution::Sequential),
        n => {
            #[cfg(feature = "parallel")]
            {
                // Fails only if the global pool already exists, which is fine.
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
            #[cfg(not(feature = "parallel"))]
            let _ = n;
            Ok(Execution::Parallel)
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let spec = match args.kind {
        SynthKind::Twin => SynthSpec::twin_and_outlier(args.records, args.seed),
        SynthKind::Distinct => SynthSpec::distinct(args.events, args.records, args.seed),
    };
    let path = spec.write(&args.out, args.folds, args.seed)?;
    println!("wrote {}", path.display());
    Ok(path)
}

pub fn cmd_build_vocab(args: &BuildVocabArgs) -> Result<Vocabulary> {
    let cfg = args.config.resolve()?;
    let (layout, _) = load_corpus(&args.data, None)?;
    let vocab = build_vocabulary(
        &layout.all_records(),
        &layout.registry,
        cfg.scenario,
        cfg.min_freq,
        cfg.max_vocab,
    )
    .map_err(CliError::from)?;
    write_file(&args.out, vocab.to_file_string())?;
    println!("size {}", vocab.len());
    println!("hash {}", vocab.hash_hex());
    Ok(vocab)
}

pub fn cmd_train(args: &TrainArgs) -> Result<RunManifest> {
    let cfg = args.config.resolve()?;
    let (layout, inputs) = load_corpus(&args.data, args.folds)?;
    let base = RunSpec {
        sources: args.source.clone(),
        target: args.target.clone(),
        fold: None,
        seed: 0,
    };
    let folds: Vec<Option<usize>> = if base.is_in_domain() && layout.kind == LayoutKind::CrossValidation {
        match args.fold {
            Some(f) => vec![Some(f)],
            None => (0..layout.in_domain_runs()).map(Some).collect(),
        }
    } else {
        if args.fold.is_some() {
            return Err(CliError::Usage(
                "--fold applies only to in-domain cross-validation plans".into(),
            ));
        }
        vec![None]
    };
    let mut rec = Recorder::new("train", base.plan_id(), &cfg, inputs);
    for fold in folds {
        let run_id = match fold {
            Some(f) => format!("{}#fold{f}", base.plan_id()),
            None => base.plan_id(),
        };
        let spec = RunSpec {
            fold,
            seed: derive_seed_str(cfg.train.seed, &run_id),
            ..base.clone()
        };
        let outcome = run_plan(&layout, &spec, &cfg, Execution::Parallel)?;
        let dir = match fold {
            Some(f) if args.fold.is_none() => args.out.join(format!("fold{f}")),
            _ => args.out.clone(),
        };
        outcome.write(&dir)?;
        for name in [
            "checkpoint.castckpt",
            "vocab.txt",
            "history.csv",
            "report.json",
            "confusion.csv",
        ] {
            rec.artifacts.push(dir.join(name));
        }
        println!("{run_id}: {} {:.4}", outcome.report.metric, outcome.report.value);
    }
    rec.finish(&args.out)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<RunManifest> {
    let cfg = args.config.resolve()?;
    let (layout, mut inputs) = load_corpus(&args.data, None)?;
    let vocab_path = args
        .vocab
        .clone()
        .unwrap_or_else(|| args.checkpoint.parent().unwrap_or(Path::new(".")).join("vocab.txt"));
    let vocab = Vocabulary::load(&vocab_path).map_err(ExperimentError::from)?;
    let ckpt = load_checkpoint::<f32>(&args.checkpoint)?;
    ckpt.check_vocab(&vocab.hash_hex())?;
    inputs.extend([args.checkpoint.clone(), vocab_path]);

    let records = match args.fold {
        Some(f) => layout.in_domain_split(&args.target, f)?.test,
        None => {
            layout
                .cross_domain_splits()
                .remove(&args.target)
                .ok_or_else(|| CorpusError::UnknownEvent(args.target.clone()))?
                .test
        }
    };
    let plan_id = format!("{}@{}", args.checkpoint.display(), args.target);
    let params = &ckpt.state.params;
    let report = evaluate_records(
        params,
        &vocab,
        &layout.registry,
        &args.target,
        &records,
        cfg.scenario,
        cfg.metric,
        &plan_id,
        params.config().max_src_len,
        Execution::Parallel,
    )?;
    let mut rec = Recorder::new("evaluate", plan_id, &cfg, inputs);
    rec.seed = ckpt.seed;
    rec.write(args.out.join("report.json"), to_json(&report))?;
    rec.write(args.out.join("confusion.csv"), report.confusion.to_csv())?;
    println!(
        "{} {:.4} (fallback rate {:.4})",
        report.metric, report.value, report.fallback_rate
    );
    rec.finish(&args.out)
}

pub fn cmd_matrix(args: &MatrixArgs) -> Result<RunManifest> {
    let cfg = args.config.resolve()?;
    let jobs = jobs_mode(args.jobs)?;
    let (layout, inputs) = load_corpus(&args.data, None)?;
    let matrix = run_matrix(&layout, &cfg, cfg.train.seed, jobs, Some(&args.out))?;
    let mut rec = Recorder::new(
        "matrix",
        format!("matrix:{}", layout.event_ids().join(",")),
        &cfg,
        inputs,
    );
    rec.write(args.out.join("matrix.csv"), matrix.to_csv())?;
    rec.write(args.out.join("provenance.json"), to_json(&matrix))?;
    print!("{}", matrix.to_csv());
    if !matrix.complete {
        rec.finish(&args.out)?;
        let failed: Vec<String> = matrix
            .provenance
            .iter()
            .flat_map(|p| p.errors.iter().cloned())
            .collect();
        return Err(CliError::Incomplete(failed.join("; ")));
    }
    let corr = match matrix.correlation(args.correlate_exclude_self) {
        Ok(c) => c,
        Err(e) => {
            rec.finish(&args.out)?;
            return Err(e.into());
        }
    };
    rec.write(args.out.join("correlation.csv"), corr.to_csv())?;
    for w in &corr.warnings {
        eprintln!("warning: {w}");
    }
    rec.finish(&args.out)
}

pub fn cmd_loo(args: &LooArgs) -> Result<RunManifest> {
    let cfg = args.config.resolve()?;
    let jobs = jobs_mode(args.jobs)?;
    let (layout, inputs) = load_corpus(&args.data, None)?;
    let loo = plan_leave_one_out(&layout.event_ids(), cfg.scenario)?;
    let inner = if jobs.is_parallel() {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let results = jobs.map(&loo.plans, |plan| -> std::result::Result<f64, String> {
        let outcome = run_plan_spec(&layout, plan, cfg.train.seed, &cfg, inner).map_err(|e| e.to_string())?;
        let dir = args.out.join("runs").join(plan.id().replace("->", "_to_"));
        outcome.write(&dir).map_err(|e| e.to_string())?;
        Ok(outcome.report.value)
    });
    let values: Vec<Option<f64>> = results.iter().map(|r| r.as_ref().ok().copied()).collect();
    let table = loo.table_csv(&values);
    let mut rec = Recorder::new("loo", format!("loo:{}", layout.event_ids().join(",")), &cfg, inputs);
    rec.write(args.out.join("loo.csv"), &table)?;
    rec.write(args.out.join("plans.json"), to_json(&loo))?;
    print!("{table}");
    let errors: Vec<String> = loo
        .plans
        .iter()
        .zip(&results)
        .filter_map(|(p, r)| r.as_ref().err().map(|e| format!("{}: {e}", p.id())))
        .collect();
    let manifest = rec.finish(&args.out)?;
    if !errors.is_empty() {
        return Err(CliError::Incomplete(errors.join("; ")));
    }
    Ok(manifest)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => cmd_synth(a).map(drop),
        Command::BuildVocab(a) => cmd_build_vocab(a).map(drop),
        Command::Train(a) => cmd_train(a).map(drop),
        Command::Evaluate(a) => cmd_evaluate(a).map(drop),
        Command::Matrix(a) => cmd_matrix(a).map(drop),
        Command::Loo(a) => cmd_loo(a).map(drop),
    }
}
