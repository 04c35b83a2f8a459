//! The `cdk` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input (validation failures, unreadable
//! or malformed files), 2 usage error, 3 training divergence.
//!
//! `--config FILE` reads `key=value` lines (`#` comments allowed) and turns
//! them into `--key value` flags placed before the command-line flags, so
//! explicit flags win. Keys the chosen subcommand does not know are skipped
//! with a warning. `CDK_SEED` is the fallback for every `--seed`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dag::{corpus_stats, export_dot, read_corpus, read_corpus_entries_unchecked, validate, DagError};
use crate::evaluation::{evaluate, human_baseline, EvalError, EvalExample, Metric, MetricReport};
use crate::extract::{extract_corpus, sample_seed_dialogue, split_corpus, triples_from_jsonl, triples_to_jsonl, SplitSpec, Triple, Turn};
use crate::generation::{attach, generate_split, hypotheses_to_jsonl, GenerationError, InferenceConfig};
use crate::textmodel::{
    AnyModel, ContextBlind, DecodeMethod, ModelError, RnnConfig, SequenceModel, TabularModel, TinyRnnLm, Vocab, DEFAULT_MAX_CONTEXT,
    DEFAULT_MAX_LEN,
};
use crate::training::{train, LossConfig, LossKind, Optimizer, TrainError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Diverged(_) => EXIT_DIVERGED,
        }
    }
}

impl From<DagError> for CliError {
    fn from(e: DagError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownMetric(_) | EvalError::InvalidOrder(_) => CliError::Usage(e.to_string()),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::InvalidConfig(m) => CliError::Usage(m),
            GenerationError::Model(m) => m.into(),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Divergence { .. } => CliError::Diverged(e.to_string()),
            TrainError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Invalid(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "cdk", version, about = "Dialogue DAG corpus tools and causality-aware response models")]
#[command(args_override_self = true)]
pub struct Cli {
    /// key=value file with default flags
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every dialogue and print `file:location:code` per violation
    Validate {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Corpus statistics
    Stats {
        path: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Extract triples and write whole-dialogue splits
    Extract {
        path: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "CDK_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train: f64,
        #[arg(long, default_value_t = 0.1)]
        valid: f64,
        #[arg(long, default_value_t = 0.1)]
        test: f64,
        #[arg(long)]
        json: bool,
    },
    /// Train a model on a triple file
    Train(TrainArgs),
    /// Score a checkpoint on a triple file
    Eval(EvalArgs),
    /// Graphviz rendering of each dialogue
    ExportDot {
        path: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw seed dialogue prefixes
    SampleSeed {
        path: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, env = "CDK_SEED", default_value_t = 0)]
        seed: u64,
        /// Draws per dialogue
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Tabular,
    Neural,
}

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub triples: PathBuf,
    /// Validation triples for early stopping
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ModelKind::Tabular)]
    pub model: ModelKind,
    #[arg(long, default_value = "mle")]
    pub loss: LossKind,
    #[arg(long, default_value_t = 1e-5)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, env = "CDK_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "adam")]
    pub optimizer: Optimizer,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Gradient-norm clip; 0 disables
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_CONTEXT)]
    pub max_context: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Inference {
    Greedy,
    Softmax,
    Topk,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "human_baseline")]
    pub checkpoint: Option<PathBuf>,
    /// Triple file of the split to score
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, value_enum, default_value_t = Inference::Greedy)]
    pub inference: Inference,
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long, default_value = "ppl,bleu,dist,cce,identity")]
    pub metrics: String,
    #[arg(long, env = "CDK_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Score the human-response oracle instead of a model
    #[arg(long)]
    pub human_baseline: bool,
    /// Hide the cause turn from the model
    #[arg(long)]
    pub context_blind: bool,
    #[arg(long)]
    pub json: bool,
    /// Write the report JSON here
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a one-row CSV here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Loss label for the CSV row
    #[arg(long, default_value = "-")]
    pub loss_label: String,
    #[arg(long)]
    pub hypotheses_out: Option<PathBuf>,
}

/// Parse a `key=value` config file into `--key value` flags.
pub fn config_flags(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key=value", i + 1)));
        };
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn take_config(args: &mut Vec<OsString>) -> Result<Option<PathBuf>, CliError> {
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--" {
            break;
        }
        if a == "--config" {
            if i + 1 >= args.len() {
                return Err(CliError::Usage("--config needs a file".into()));
            }
            let p = PathBuf::from(args.remove(i + 1));
            args.remove(i);
            return Ok(Some(p));
        }
        if let Some(p) = a.strip_prefix("--config=") {
            let p = PathBuf::from(p);
            args.remove(i);
            return Ok(Some(p));
        }
        i += 1;
    }
    Ok(None)
}

fn expand_config(mut args: Vec<OsString>, err: &mut dyn Write) -> Result<Vec<OsString>, CliError> {
    let Some(path) = take_config(&mut args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let pairs = config_flags(&text)?;
    let Some(pos) = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map(|p| p + 1)
    else {
        return Ok(args);
    };
    let sub_name = args[pos].to_string_lossy().into_owned();
    let cmd = Cli::command();
    let Some(sub) = cmd.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let mut inserted = Vec::new();
    for (k, v) in pairs {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(k.as_str())) else {
            let _ = writeln!(err, "warning: config key `{k}` is not a `{sub_name}` flag, ignored");
            continue;
        };
        if arg.get_num_args().is_some_and(|n| n.takes_values()) {
            inserted.push(OsString::from(format!("--{k}")));
            inserted.push(OsString::from(v));
        } else if matches!(v.as_str(), "true" | "1" | "yes") {
            inserted.push(OsString::from(format!("--{k}")));
        }
    }
    let tail = args.split_off(pos + 1);
    args.extend(inserted);
    args.extend(tail);
    Ok(args)
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args, err) {
        Ok(a) => a,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return if code == 0 { EXIT_OK } else { EXIT_USAGE };
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

fn dispatch(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    match cmd {
        Command::Validate { path, json } => cmd_validate(&path, json, out, err),
        Command::Stats { path, json } => cmd_stats(&path, json, out).map(|_| EXIT_OK),
        Command::Extract {
            path,
            out: dir,
            seed,
            train,
            valid,
            test,
            json,
        } => {
            let spec = SplitSpec::new(train, valid, test, seed).map_err(|e| CliError::Usage(e.to_string()))?;
            cmd_extract(&path, &dir, &spec, json, out).map(|_| EXIT_OK)
        }
        Command::Train(a) => cmd_train(&a, out, err).map(|_| EXIT_OK),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| EXIT_OK),
        Command::ExportDot { path, out: dest } => cmd_export_dot(&path, dest.as_deref(), out).map(|_| EXIT_OK),
        Command::SampleSeed {
            path,
            lambda,
            seed,
            count,
            json,
        } => cmd_sample_seed(&path, lambda, seed, count, json, out).map(|_| EXIT_OK),
    }
}

fn w(out: &mut dyn Write, s: impl AsRef<str>) -> Result<(), CliError> {
    out.write_all(s.as_ref().as_bytes())
        .map_err(|e| CliError::Invalid(format!("write failed: {e}")))
}

fn error_site(e: &DagError) -> (String, &'static str) {
    match e {
        DagError::MalformedDocument(_) => ("document".into(), "MalformedDocument"),
        DagError::SchemaViolation { location, .. } => (location.clone(), "SchemaViolation"),
        DagError::CycleDetected { node } => (format!("node{node}"), "CycleDetected"),
        DagError::DanglingEdge { from, to } => (format!("edge({from},{to})"), "DanglingEdge"),
        DagError::Invalid(v) => (v.location(), v.code()),
        DagError::PathExplosion { .. } => ("-".into(), "PathExplosion"),
        DagError::Io { .. } => ("-".into(), "Io"),
    }
}

#[derive(Serialize)]
struct ViolationLine {
    file: String,
    location: String,
    code: String,
    message: String,
}

pub fn cmd_validate(path: &Path, json: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, CliError> {
    let entries = read_corpus_entries_unchecked(path)?;
    if entries.is_empty() {
        let _ = writeln!(err, "warning: no dialogues found in {}", path.display());
    }
    let mut lines = Vec::new();
    for (label, parsed) in entries {
        match parsed {
            Ok(dag) => {
                for v in validate(&dag) {
                    lines.push(ViolationLine {
                        file: label.clone(),
                        location: v.location(),
                        code: v.code().into(),
                        message: DagError::from(v).to_string(),
                    });
                }
            }
            Err(e) => {
                let (location, code) = error_site(&e);
                lines.push(ViolationLine {
                    file: label,
                    location,
                    code: code.into(),
                    message: e.to_string(),
                });
            }
        }
    }
    if json {
        w(out, serde_json::to_string(&lines).expect("violations serialize") + "\n")?;
    } else {
        for l in &lines {
            w(out, format!("{}:{}:{}\n", l.file, l.location, l.code))?;
        }
    }
    Ok(if lines.is_empty() { EXIT_OK } else { EXIT_INVALID })
}

pub fn cmd_stats(path: &Path, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let stats = corpus_stats(&read_corpus(path)?);
    if json {
        w(out, serde_json::to_string(&stats).expect("stats serialize") + "\n")
    } else {
        w(out, stats.to_string())
    }
}

#[derive(Serialize)]
struct ExtractSummary {
    dialogues: usize,
    triples: usize,
    train: usize,
    valid: usize,
    test: usize,
}

pub fn cmd_extract(path: &Path, dir: &Path, spec: &SplitSpec, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    let dags = read_corpus(path)?;
    let triples = extract_corpus(&dags).map_err(|e| CliError::Invalid(e.to_string()))?;
    let splits = split_corpus(&dags, spec).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let write = |name: &str, ts: &[Triple]| -> Result<usize, CliError> {
        let p = dir.join(name);
        fs::write(&p, triples_to_jsonl(ts)).map_err(|e| io_err(&p, e))?;
        Ok(ts.len())
    };
    let pick = |ids: &std::collections::BTreeSet<String>| -> Vec<Triple> {
        triples.iter().filter(|t| ids.contains(&t.dialogue_id)).cloned().collect()
    };
    let summary = ExtractSummary {
        dialogues: dags.len(),
        triples: write("triples.jsonl", &triples)?,
        train: write("train.jsonl", &pick(&splits.train))?,
        valid: write("valid.jsonl", &pick(&splits.valid))?,
        test: write("test.jsonl", &pick(&splits.test))?,
    };
    if json {
        w(out, serde_json::to_string(&summary).expect("summary serializes") + "\n")
    } else {
        w(
            out,
            format!(
                "{} dialogues, {} triples (train {}, valid {}, test {}) -> {}\n",
                summary.dialogues,
                summary.triples,
                summary.train,
                summary.valid,
                summary.test,
                dir.display()
            ),
        )
    }
}

fn read_triples(path: &Path) -> Result<Vec<Triple>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    triples_from_jsonl(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn init_model(a: &TrainArgs, triples: &[Triple]) -> AnyModel {
    match a.model {
        ModelKind::Tabular => AnyModel::Tabular(TabularModel::from_triples(triples)),
        ModelKind::Neural => {
            let config = RnnConfig {
                embed_dim: a.embed_dim,
                hidden_dim: a.hidden_dim,
                max_context: a.max_context,
            };
            AnyModel::Neural(TinyRnnLm::new(Vocab::build(triples), config, a.seed))
        }
    }
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let triples = read_triples(&a.triples)?;
    let valid = a.valid.as_deref().map(read_triples).transpose()?;
    let config = LossConfig {
        loss: a.loss,
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        optimizer: a.optimizer,
        max_steps: a.max_steps,
        clip_norm: (a.clip > 0.0).then_some(a.clip),
        patience: a.patience,
    };
    config.check()?;
    let mut model = init_model(a, &triples);
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let dir = a.out.clone();
    let outcome = train(&mut model, &triples, valid.as_deref(), &config, |report, m| {
        let p = dir.join(format!("epoch-{}.ckpt.json", report.epoch));
        m.save(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        let _ = writeln!(
            err,
            "epoch {} steps {} loss {:.6} train_ppl {:.4}{}",
            report.epoch,
            report.steps,
            report.loss,
            report.train_ppl,
            report.valid_ppl.map(|v| format!(" valid_ppl {v:.4}")).unwrap_or_default()
        );
        Ok(())
    })?;
    let ckpt = a.out.join("model.ckpt.json");
    model.save(&ckpt).map_err(|e| io_err(&ckpt, e))?;
    let hist = a.out.join("history.csv");
    fs::write(&hist, outcome.history_csv()).map_err(|e| io_err(&hist, e))?;
    if a.json {
        let summary = serde_json::json!({
            "checkpoint": ckpt.display().to_string(),
            "history": hist.display().to_string(),
            "steps": outcome.steps,
            "epochs": outcome.history.len(),
            "stopped_early": outcome.stopped_early,
            "final": outcome.history.last(),
        });
        w(out, summary.to_string() + "\n")
    } else {
        w(
            out,
            format!(
                "{} steps over {} epochs{} -> {}\n",
                outcome.steps,
                outcome.history.len(),
                if outcome.stopped_early { " (early stop)" } else { "" },
                ckpt.display()
            ),
        )
    }
}

fn decode_method(a: &EvalArgs) -> DecodeMethod {
    match a.inference {
        Inference::Greedy => DecodeMethod::Greedy,
        Inference::Softmax => DecodeMethod::Softmax {
            temperature: a.temperature,
        },
        Inference::Topk => DecodeMethod::TopK { k: a.topk },
    }
}

fn model_label(m: &AnyModel) -> &'static str {
    match m {
        AnyModel::Tabular(_) => "tabular",
        AnyModel::Neural(_) => "neural",
    }
}

fn vocab_size(m: &AnyModel) -> usize {
    match m {
        AnyModel::Tabular(t) => t.responses().len(),
        AnyModel::Neural(n) => n.vocab().len(),
    }
}

fn score<M: SequenceModel>(
    model: &M,
    examples: &mut [EvalExample],
    triples: &[Triple],
    metrics: &[Metric],
    inference: &InferenceConfig,
    hyp_out: Option<&Path>,
) -> Result<MetricReport, CliError> {
    if metrics.iter().any(|m| m.needs_hypotheses()) || hyp_out.is_some() {
        let hyps = generate_split(model, examples, inference)?;
        if let Some(p) = hyp_out {
            fs::write(p, hypotheses_to_jsonl(&hyps)).map_err(|e| io_err(p, e))?;
        }
        attach(examples, &hyps);
    }
    Ok(evaluate(model, examples, triples, metrics, inference.seed)?)
}

fn report_table(r: &MetricReport) -> String {
    let rows = [
        ("PPL", r.ppl),
        ("BLEU1", r.bleu1),
        ("BLEU2", r.bleu2),
        ("BLEU4", r.bleu4),
        ("Dist1", r.dist1),
        ("Dist2", r.dist2),
        ("CCE", r.cce),
        ("Identity Acc", r.identity_acc),
    ];
    let mut s = String::new();
    for (k, v) in rows {
        let v = v.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
        s.push_str(&format!("{k:<14}{v:>12}\n"));
    }
    s.push_str(&format!("{:<14}{:>12}\n", "examples", r.counts.examples));
    s
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let triples = read_triples(&a.split)?;
    let mut examples = EvalExample::group(&triples);
    let metrics = Metric::parse_list(&a.metrics)?;
    let method = decode_method(a);
    let (report, model_name) = if a.human_baseline {
        (human_baseline(&examples)?, "human".to_string())
    } else {
        let path = a
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))?;
        let model = AnyModel::load(path)?;
        let inference = InferenceConfig {
            method,
            max_len: a.max_len,
            seed: a.seed,
        };
        inference.check(Some(vocab_size(&model)))?;
        let label = model_label(&model).to_string();
        let hyp_out = a.hypotheses_out.as_deref();
        let r = if a.context_blind {
            score(&ContextBlind(model), &mut examples, &triples, &metrics, &inference, hyp_out)?
        } else {
            score(&model, &mut examples, &triples, &metrics, &inference, hyp_out)?
        };
        (r, if a.context_blind { format!("{label}-blind") } else { label })
    };
    let json = report.to_json();
    if let Some(p) = &a.out {
        fs::write(p, format!("{json}\n")).map_err(|e| io_err(p, e))?;
    }
    if let Some(p) = &a.csv {
        let row = report.csv_row(&model_name, &a.loss_label, &method.to_string());
        fs::write(p, format!("{}\n{row}\n", MetricReport::CSV_HEADER)).map_err(|e| io_err(p, e))?;
    }
    if a.json {
        w(out, json + "\n")
    } else {
        w(out, report_table(&report))
    }
}

pub fn cmd_export_dot(path: &Path, dest: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let dags = read_corpus(path)?;
    let text: String = dags.iter().map(export_dot).collect();
    match dest {
        Some(p) => fs::write(p, text).map_err(|e| io_err(p, e)),
        None => w(out, text),
    }
}

#[derive(Serialize)]
struct SeedDraw<'a> {
    dialogue_id: &'a str,
    nodes: Vec<u32>,
    turns: Vec<String>,
}

pub fn cmd_sample_seed(path: &Path, lambda: f64, seed: u64, count: usize, json: bool, out: &mut dyn Write) -> Result<(), CliError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::Usage(format!("--lambda must be positive, got {lambda}")));
    }
    let dags = read_corpus(path)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for dag in &dags {
        for _ in 0..count {
            let nodes = match sample_seed_dialogue(dag, lambda, &mut rng) {
                Ok(n) => n,
                Err(e) => {
                    w(out, format!("# {}: {e}\n", dag.dialogue_id))?;
                    continue;
                }
            };
            let turns: Vec<String> = nodes
                .iter()
                .filter_map(|&id| dag.node(id))
                .map(|n| match &n.speaker {
                    Some(s) => Turn::new(s.clone(), n.text.clone()),
                    None => Turn::scene(n.text.clone()),
                })
                .map(|t| t.to_string())
                .collect();
            let draw = SeedDraw {
                dialogue_id: &dag.dialogue_id,
                nodes,
                turns,
            };
            if json {
                w(out, serde_json::to_string(&draw).expect("draw serializes") + "\n")?;
            } else {
                let ids: Vec<String> = draw.nodes.iter().map(u32::to_string).collect();
                w(out, format!("{} [{}]\n", draw.dialogue_id, ids.join(",")))?;
                for t in &draw.turns {
                    w(out, format!("  {t}\n"))?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_lines() {
        let f = config_flags("# c\nlr = 0.1\nmax_steps=5\n\n").unwrap();
        assert_eq!(f, vec![("lr".into(), "0.1".into()), ("max-steps".into(), "5".into())]);
        assert!(config_flags("oops").is_err());
    }

    #[test]
    fn config_is_inserted_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        fs::write(&p, "json=true\nlr=0.5\n").unwrap();
        let mut err = Vec::new();
        let args: Vec<OsString> = ["cdk", "--config", p.to_str().unwrap(), "stats", "corpus"]
            .iter()
            .map(OsString::from)
            .collect();
        let got = expand_config(args, &mut err).unwrap();
        let got: Vec<String> = got.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(got, vec!["cdk", "stats", "--json", "corpus"]);
        assert!(String::from_utf8(err).unwrap().contains("`lr`"));
    }

    #[test]
    fn usage_errors_exit_2() {
        let (mut o, mut e) = (Vec::new(), Vec::new());
        assert_eq!(run(["cdk", "frobnicate"], &mut o, &mut e), EXIT_USAGE);
        assert_eq!(run(["cdk", "stats"], &mut o, &mut e), EXIT_USAGE);
    }
}
