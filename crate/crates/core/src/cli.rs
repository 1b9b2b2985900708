//! Command-line front end: `train`, `eval` and `analyze`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 data error,
//! 3 numerical failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointError, CheckpointMeta};
use crate::config::{ConfigError, TrainConfig};
use crate::data::{classify_relations, DataError, FilterIndex, RelationId, Split, TripleStore, Vocab};
use crate::eval::{evaluate, EvalError, RankingReport, TiePolicy};
use crate::model::{EmbeddingTable, ModelError};
use crate::patterns::{export_histogram, pattern_residual, PatternKind};
use crate::rules::{parse_rules, RuleError, RuleSet};
use crate::trainer::{fit, write_log_tsv, TrainError, Validation};

pub const RUN_MANIFEST_FILE: &str = "manifest.json";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const FINAL_DIR: &str = "checkpoint";
pub const BEST_DIR: &str = "best";
pub const TYING_FILE: &str = "tying.json";
pub const REPORT_JSON_FILE: &str = "report.json";
pub const REPORT_TSV_FILE: &str = "report.tsv";

#[derive(Debug, Parser)]
#[command(name = "pairre", version, about = "Paired-relation knowledge graph embeddings")]
struct Cli {
    /// Worker threads for training and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model and write checkpoints, a log and a run manifest.
    Train(TrainArgs),
    /// Filtered link-prediction evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Residual of a relation-pattern condition, exported as a histogram.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    /// Validation triples for model selection.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Further triple files whose names join the vocabulary (e.g. the test split).
    #[arg(long = "vocab-from", num_args = 1..)]
    vocab_from: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Known-true triple files removed from candidate lists.
    #[arg(long, num_args = 1..)]
    filter: Vec<PathBuf>,
    /// Training triples, for the per-category breakdown.
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long, default_value = "mean")]
    tie_policy: TiePolicy,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pattern: PatternKind,
    /// Comma-separated relation names.
    #[arg(long, value_delimiter = ',', required = true)]
    relations: Vec<String>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("relation `{name}` is not in the vocabulary of {checkpoint}")]
    UnknownRelation { name: String, checkpoint: PathBuf },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Rules(_) => 1,
            CliError::Train(e) => match e {
                TrainError::NonFinite { .. } => 3,
                TrainError::Config(_) | TrainError::Rules(_) | TrainError::TableMismatch { .. } => 1,
                _ => 2,
            },
            CliError::Model(_) => 1,
            CliError::Eval(EvalError::Arity { .. } | EvalError::ZeroBins | EvalError::UnsupportedScorer(_)) => 1,
            CliError::Data(_)
            | CliError::Checkpoint(_)
            | CliError::Eval(_)
            | CliError::UnknownRelation { .. }
            | CliError::Io { .. } => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(cli.command)),
            Err(e) => Err(CliError::Usage(format!("cannot start {n} threads: {e}"))),
        },
        None => dispatch(cli.command),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Analyze(a) => analyze(a),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub run_id: String,
    pub version: String,
    pub scorer: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// The configuration file exactly as read.
    pub config_text: String,
    pub inputs: Vec<InputFile>,
    pub threads: usize,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub steps: usize,
    pub best_step: Option<usize>,
    pub best_valid_mrr: Option<f64>,
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Stable identifier derived from the configuration and input contents.
fn run_id(config: &TrainConfig, inputs: &[InputFile]) -> String {
    let mut h = Sha256::new();
    h.update(config.to_config_string().as_bytes());
    for f in inputs {
        h.update(b"\0");
        h.update(f.role.as_bytes());
        h.update(f.sha256.as_bytes());
    }
    hex::encode(h.finalize())[..16].to_owned()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("plain data serializes");
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let started_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let config_text = fs::read_to_string(&a.config).map_err(io_err(&a.config))?;
    let config: TrainConfig = config_text.parse()?;

    let mut vocab_files = vec![a.train.clone()];
    vocab_files.extend(a.valid.clone());
    vocab_files.extend(a.vocab_from.iter().cloned());
    let vocab = Vocab::from_triple_files(&vocab_files)?;
    let train = TripleStore::load(&a.train, &vocab, Split::Train)?;
    let valid = a
        .valid
        .as_deref()
        .map(|p| TripleStore::load(p, &vocab, Split::Valid))
        .transpose()?;
    let rules = match &a.rules {
        Some(p) => parse_rules(p, &vocab, config.dim)?,
        None => RuleSet::default(),
    };

    let mut inputs = vec![InputFile {
        role: "config".into(),
        path: a.config.clone(),
        sha256: sha256_file(&a.config)?,
    }];
    let mut add = |role: &str, p: &Path| -> Result<(), CliError> {
        inputs.push(InputFile {
            role: role.into(),
            path: p.to_path_buf(),
            sha256: sha256_file(p)?,
        });
        Ok(())
    };
    add("train", &a.train)?;
    if let Some(p) = &a.valid {
        add("valid", p)?;
    }
    if let Some(p) = &a.rules {
        add("rules", p)?;
    }
    for p in &a.vocab_from {
        add("vocab", p)?;
    }
    let run_id = run_id(&config, &inputs);
    log::info!(
        "run {run_id}: {} entities, {} relations, {} training triples",
        vocab.num_entities(),
        vocab.num_relations(),
        train.len()
    );

    let table = EmbeddingTable::init(
        config.scorer,
        vocab.num_entities(),
        vocab.num_relations(),
        config.dim,
        config.gamma,
        config.seed,
    )?;
    let filter = valid
        .as_ref()
        .map_or_else(|| FilterIndex::build([&train]), |v| FilterIndex::build([&train, v]));
    let validation = valid.as_ref().map(|store| Validation {
        store,
        filter: &filter,
    });
    let outcome = fit(table, &train, &config, rules, Some(&filter), validation)?;

    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    let meta = |step| CheckpointMeta {
        gamma: config.gamma,
        seed: config.seed,
        step,
        run_id: Some(run_id.clone()),
        run_manifest: Some(format!("../{RUN_MANIFEST_FILE}")),
    };
    save_checkpoint(&a.out.join(FINAL_DIR), &outcome.table, &vocab, &meta(outcome.steps))?;
    if let Some(best) = &outcome.best {
        save_checkpoint(&a.out.join(BEST_DIR), &best.table, &vocab, &meta(best.step))?;
    }
    if !outcome.rules.hard().is_empty() {
        write_json(&a.out.join(TYING_FILE), &outcome.rules.hard())?;
    }
    let log_path = a.out.join(TRAIN_LOG_FILE);
    write_log_tsv(&log_path, Some(&run_id), &outcome.log).map_err(io_err(&log_path))?;

    let manifest = RunManifest {
        run_id: run_id.clone(),
        version: env!("PAIRRE_BUILD_VERSION").to_owned(),
        scorer: config.scorer.to_string(),
        seed: config.seed,
        config: config.clone(),
        config_text,
        inputs,
        threads: rayon::current_num_threads(),
        started_unix,
        wall_seconds: started.elapsed().as_secs_f64(),
        steps: outcome.steps,
        best_step: outcome.best.as_ref().map(|b| b.step),
        best_valid_mrr: outcome.best.as_ref().map(|b| b.valid_mrr),
    };
    write_json(&a.out.join(RUN_MANIFEST_FILE), &manifest)?;

    let last = outcome.log.last();
    println!(
        "run {run_id}: {} steps, final loss {:.6}{}",
        outcome.steps,
        last.map_or(f64::NAN, |r| r.loss),
        outcome
            .best
            .as_ref()
            .map_or(String::new(), |b| format!(", best valid MRR {:.4} at step {}", b.valid_mrr, b.step))
    );
    Ok(())
}

/// Contents of `report.json`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalOutput {
    /// Run that produced the evaluated checkpoint.
    pub run_id: Option<String>,
    pub run_manifest: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub checkpoint_step: usize,
    pub inputs: Vec<InputFile>,
    pub report: RankingReport,
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let test = TripleStore::load(&a.test, &ckpt.vocab, Split::Test)?;
    let mut filter_stores = Vec::new();
    for p in &a.filter {
        filter_stores.push(TripleStore::load(p, &ckpt.vocab, Split::Train)?);
    }
    let filter = (!filter_stores.is_empty()).then(|| {
        let mut f = FilterIndex::build(&filter_stores);
        // the test triples themselves are always known true
        for t in &test {
            f.insert(*t);
        }
        f
    });
    let categories = a
        .train
        .as_deref()
        .map(|p| TripleStore::load(p, &ckpt.vocab, Split::Train))
        .transpose()?
        .map(|train| classify_relations(&train, ckpt.vocab.num_relations()));

    let report = evaluate(
        &ckpt.table,
        &test,
        filter.as_ref(),
        categories.as_deref(),
        a.tie_policy,
    )?;
    let mut inputs = vec![InputFile {
        role: "test".into(),
        path: a.test.clone(),
        sha256: sha256_file(&a.test)?,
    }];
    for p in a.filter.iter().chain(&a.train) {
        inputs.push(InputFile {
            role: if Some(p) == a.train.as_ref() { "train" } else { "filter" }.into(),
            path: p.clone(),
            sha256: sha256_file(p)?,
        });
    }
    let output = EvalOutput {
        run_id: ckpt.manifest.run_id.clone(),
        run_manifest: ckpt
            .manifest
            .run_manifest
            .as_ref()
            .map(|m| a.checkpoint.join(m)),
        checkpoint: a.checkpoint.clone(),
        checkpoint_step: ckpt.manifest.step,
        inputs,
        report,
    };
    fs::create_dir_all(&a.out).map_err(io_err(&a.out))?;
    write_json(&a.out.join(REPORT_JSON_FILE), &output)?;
    let tsv = a.out.join(REPORT_TSV_FILE);
    let mut text = String::new();
    if let Some(id) = &output.run_id {
        text.push_str(&format!("# run_id={id}\n"));
    }
    text.push_str(&output.report.to_tsv());
    fs::write(&tsv, text).map_err(io_err(&tsv))?;
    let report = output.report;
    print!("{}", report.summary());
    Ok(())
}

fn analyze(a: AnalyzeArgs) -> Result<(), CliError> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let relations = a
        .relations
        .iter()
        .map(|name| {
            ckpt.vocab
                .relation_id(name.trim())
                .ok_or_else(|| CliError::UnknownRelation {
                    name: name.clone(),
                    checkpoint: a.checkpoint.clone(),
                })
        })
        .collect::<Result<Vec<RelationId>, _>>()?;
    let residual = pattern_residual(&ckpt.table, a.pattern, &relations)?;
    export_histogram(&residual, a.bins, &a.out)?;
    println!(
        "{} [{}]: mean |residual| {:.6e}, max |residual| {:.6e} over {} dims",
        a.pattern,
        a.relations.join(", "),
        residual.mean_abs,
        residual.max_abs,
        residual.residual.len()
    );
    Ok(())
}
