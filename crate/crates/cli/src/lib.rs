//! Command implementations behind the `eagat` binary.
//!
//! Exit codes: 0 success, 2 input or validation error, 3 numeric failure
//! (non-finite loss, failed gradient check).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use eagat::data::{
    evaluate, generate_synthetic, kfold_split, load_corpus, load_predictions, summarize_folds,
    Corpus, EvalResult, Prediction, SyntheticSpec,
};
use eagat::model::{gradient_audit, ModelConfig, ModelState};
use eagat::segmentation::{build_multimask, segment, Document};

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn numeric(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_NUMERIC,
            message: message.into(),
        }
    }
}

impl From<eagat::Error> for CliError {
    fn from(e: eagat::Error) -> Self {
        let code = match e {
            eagat::Error::NonFinite { .. } | eagat::Error::DegenerateSample(_) => EXIT_NUMERIC,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "eagat",
    version,
    about = "Multi-mask graph attention with Activation Sort"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the multi-mask matrix of each document.
    Mask(MaskArgs),
    /// Write a seeded synthetic corpus.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus a per-step loss log.
    Train(TrainArgs),
    /// Score a checkpoint or a predictions file against a corpus.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on a random document.
    Gradcheck(GradcheckArgs),
    /// Split a corpus into k folds and report position statistics.
    Split(SplitArgs),
}

/// Model configuration: a key=value file, then individual overrides.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set num_layers=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            cfg.apply_kv_text(&text)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Corpus JSONL.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub input: Option<PathBuf>,
    /// Raw text, segmented on punctuation.
    #[arg(long)]
    pub text: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 20)]
    pub docs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub min_clauses: usize,
    #[arg(long, default_value_t = 8)]
    pub max_clauses: usize,
    #[arg(long, default_value_t = 2)]
    pub min_sentences: usize,
    #[arg(long, default_value_t = 3)]
    pub max_sentences: usize,
    #[arg(long, default_value_t = 1)]
    pub min_pairs: usize,
    #[arg(long, default_value_t = 2)]
    pub max_pairs: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Overrides the config's `steps`.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-step loss log; defaults to `<out>.losses.jsonl`.
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(
        long,
        required_unless_present = "predictions",
        conflicts_with = "predictions"
    )]
    pub checkpoint: Option<PathBuf>,
    /// Score this predictions JSONL instead of running a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Fold files from `split`; each is scored separately and summarised.
    #[arg(long = "fold")]
    pub folds: Vec<PathBuf>,
    /// Overrides the checkpoint's threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Also write the model's predictions as JSONL.
    #[arg(long)]
    pub write_predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Clauses in the random document (at most 8).
    #[arg(long, default_value_t = 5)]
    pub doc_size: usize,
    /// Sentences in the random document; defaults to min(2, doc size).
    #[arg(long)]
    pub sentences: Option<usize>,
    /// Debug: turn every stop-gradient into the identity.
    #[arg(long)]
    pub disable_stop_gradient: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Directory for `fold_{i}.json`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Statistics JSON; printed to stdout when absent.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Everything needed to rerun a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: String,
    pub config: Option<ModelConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub started_unix: f64,
    pub finished_unix: f64,
    pub exit_code: i32,
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    fs::write(path, text + "\n").map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

/// What a command read, wrote and ran with, for the manifest.
#[derive(Debug, Default)]
pub struct RunRecord {
    pub config: Option<ModelConfig>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

/// Run one parsed command. `argv` is recorded in the manifest; `stdout`
/// receives anything the command prints.
pub fn run(cli: Cli, argv: Vec<String>, stdout: &mut dyn Write) -> CliResult {
    let started = now();
    let (name, manifest, default_manifest) = match &cli.command {
        Command::Mask(a) => (
            "mask",
            a.manifest.clone(),
            a.out.as_deref().map(|p| with_suffix(p, ".manifest.json")),
        ),
        Command::Synth(a) => (
            "synth",
            a.manifest.clone(),
            Some(with_suffix(&a.out, ".manifest.json")),
        ),
        Command::Train(a) => (
            "train",
            a.manifest.clone(),
            Some(with_suffix(&a.out, ".manifest.json")),
        ),
        Command::Eval(a) => (
            "eval",
            a.manifest.clone(),
            a.out.as_deref().map(|p| with_suffix(p, ".manifest.json")),
        ),
        Command::Gradcheck(a) => (
            "gradcheck",
            a.manifest.clone(),
            a.out.as_deref().map(|p| with_suffix(p, ".manifest.json")),
        ),
        Command::Split(a) => (
            "split",
            a.manifest.clone(),
            Some(a.out_dir.join("split.manifest.json")),
        ),
    };
    let mut record = RunRecord::default();
    let result = match cli.command {
        Command::Mask(a) => cmd_mask(a, &mut record, stdout),
        Command::Synth(a) => cmd_synth(a, &mut record),
        Command::Train(a) => cmd_train(a, &mut record),
        Command::Eval(a) => cmd_eval(a, &mut record, stdout),
        Command::Gradcheck(a) => cmd_gradcheck(a, &mut record, stdout),
        Command::Split(a) => cmd_split(a, &mut record, stdout),
    };
    let path = manifest
        .or(default_manifest)
        .unwrap_or_else(|| PathBuf::from(format!("eagat-{name}.manifest.json")));
    let m = RunManifest {
        command: name.to_string(),
        argv,
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: record.seed.or(record.config.as_ref().map(|c| c.seed)),
        config: record.config,
        inputs: record.inputs,
        outputs: record.outputs,
        started_unix: started,
        finished_unix: now(),
        exit_code: result.as_ref().err().map_or(0, |e| e.code),
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(&path, &m)?;
    result
}

fn emit(
    value: &impl Serialize,
    out: Option<&Path>,
    record: &mut RunRecord,
    stdout: &mut dyn Write,
) -> CliResult {
    match out {
        Some(path) => {
            write_json(path, value)?;
            record.outputs.push(display(path));
        }
        None => {
            let text = serde_json::to_string_pretty(value).expect("serializable");
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn read_corpus(path: &Path, record: &mut RunRecord) -> CliResult<Corpus> {
    record.inputs.push(display(path));
    load_corpus(path).map_err(|e| CliError {
        message: format!("{}: {e}", path.display()),
        ..e.into()
    })
}

pub fn cmd_mask(a: MaskArgs, record: &mut RunRecord, stdout: &mut dyn Write) -> CliResult {
    let docs: Vec<Document> = match (&a.input, &a.text) {
        (Some(path), _) => read_corpus(path, record)?.documents,
        (None, Some(text)) => vec![segment("text", text)?],
        (None, None) => return Err(CliError::input("give --input or --text")),
    };
    let masks: Vec<Value> = docs
        .iter()
        .map(|d| {
            json!({
                "doc_id": d.doc_id(),
                "sentence_ids": d.sentence_ids(),
                "mask": build_multimask(d).to_rows(),
            })
        })
        .collect();
    emit(&masks, a.out.as_deref(), record, stdout)
}

pub fn cmd_synth(a: SynthArgs, record: &mut RunRecord) -> CliResult {
    let spec = SyntheticSpec {
        clauses: (a.min_clauses, a.max_clauses),
        sentences: (a.min_sentences, a.max_sentences),
        pairs: (a.min_pairs, a.max_pairs),
    };
    record.seed = Some(a.seed);
    let corpus = generate_synthetic(a.docs, a.seed, spec)?;
    corpus.save(&a.out)?;
    record.outputs.push(display(&a.out));
    Ok(())
}

#[derive(Serialize)]
struct LogLine<'a> {
    step: u64,
    #[serde(flatten)]
    report: &'a eagat::heads::LossReport,
}

pub fn cmd_train(a: TrainArgs, record: &mut RunRecord) -> CliResult {
    let mut cfg = a.config.resolve()?;
    if let Some(steps) = a.steps {
        cfg.steps = steps;
    }
    if let Some(p) = &a.config.config {
        record.inputs.push(display(p));
    }
    record.config = Some(cfg.clone());
    let corpus = read_corpus(&a.corpus, record)?;
    let log_path = a
        .loss_log
        .clone()
        .unwrap_or_else(|| with_suffix(&a.out, ".losses.jsonl"));
    let mut log = String::new();
    let mut state = ModelState::new(cfg.clone(), corpus.vocabulary.clone())?;
    let outcome = state.train(&corpus.documents, cfg.steps, |step, report| {
        log.push_str(&serde_json::to_string(&LogLine { step, report }).expect("serializable"));
        log.push('\n');
    });
    fs::write(&log_path, &log)?;
    record.outputs.push(display(&log_path));
    outcome?;
    state.save(&a.out)?;
    record.outputs.push(display(&a.out));
    Ok(())
}

fn fold_ids(path: &Path) -> CliResult<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    v.get("doc_ids")
        .and_then(Value::as_array)
        .and_then(|ids| {
            ids.iter()
                .map(|x| x.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
        })
        .ok_or_else(|| {
            CliError::input(format!(
                "{}: expected a \"doc_ids\" string array",
                path.display()
            ))
        })
}

pub fn cmd_eval(a: EvalArgs, record: &mut RunRecord, stdout: &mut dyn Write) -> CliResult {
    let corpus = read_corpus(&a.corpus, record)?;
    let predictions: Vec<Prediction> = match (&a.checkpoint, &a.predictions) {
        (Some(ck), _) => {
            record.inputs.push(display(ck));
            let state = ModelState::load(ck)
                .map_err(|e| CliError::input(format!("{}: {e}", ck.display())))?;
            let threshold = a.threshold.unwrap_or(state.config.threshold);
            record.config = Some(state.config.clone());
            let preds = state.predict_all(&corpus.documents, threshold)?;
            if let Some(path) = &a.write_predictions {
                let mut text = String::new();
                for p in &preds {
                    text.push_str(&serde_json::to_string(p).expect("serializable"));
                    text.push('\n');
                }
                fs::write(path, text)?;
                record.outputs.push(display(path));
            }
            preds
        }
        (None, Some(path)) => {
            record.inputs.push(display(path));
            load_predictions(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
        }
        (None, None) => return Err(CliError::input("give --checkpoint or --predictions")),
    };

    if a.folds.is_empty() {
        let result = evaluate(&predictions, &corpus.documents)?;
        return emit(&result, a.out.as_deref(), record, stdout);
    }
    let mut per_fold: Vec<EvalResult> = Vec::new();
    for path in &a.folds {
        record.inputs.push(display(path));
        let ids = fold_ids(path)?;
        let gold = corpus.select(&ids)?;
        let preds: Vec<Prediction> = predictions
            .iter()
            .filter(|p| ids.contains(&p.doc_id))
            .cloned()
            .collect();
        per_fold.push(evaluate(&preds, &gold)?);
    }
    let summary = summarize_folds(&per_fold)?;
    emit(
        &json!({ "folds": per_fold, "summary": summary }),
        a.out.as_deref(),
        record,
        stdout,
    )
}

pub fn cmd_gradcheck(
    a: GradcheckArgs,
    record: &mut RunRecord,
    stdout: &mut dyn Write,
) -> CliResult {
    let mut cfg = a.config.resolve()?;
    if a.disable_stop_gradient {
        cfg.disable_stop_gradient = true;
    }
    record.config = Some(cfg.clone());
    let n = a.doc_size;
    if n == 0 || n > 8 {
        return Err(CliError::input(format!(
            "--doc-size must be in 1..=8, got {n}"
        )));
    }
    let s = a.sentences.unwrap_or(n.min(2));
    if s == 0 || s > n {
        return Err(CliError::input(format!(
            "--sentences must be in 1..={n}, got {s}"
        )));
    }
    let pairs = (n - 1).min(2);
    let spec = SyntheticSpec {
        clauses: (n, n),
        sentences: (s, s),
        pairs: (pairs.min(1), pairs),
    };
    let corpus = generate_synthetic(1, cfg.seed, spec)?;
    let state = ModelState::new(cfg, corpus.vocabulary.clone())?;
    let report = gradient_audit(&corpus.documents[0], &state)?;
    emit(&report, a.out.as_deref(), record, stdout)?;
    if report.passed() {
        Ok(())
    } else {
        let failing: Vec<&str> = report
            .groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.name.as_str())
            .collect();
        Err(CliError::numeric(format!(
            "gradient check failed (groups: {:?}, stop-gradient: {:?})",
            failing, report.stop_gradient.status
        )))
    }
}

pub fn cmd_split(a: SplitArgs, record: &mut RunRecord, stdout: &mut dyn Write) -> CliResult {
    let corpus = read_corpus(&a.corpus, record)?;
    record.seed = Some(a.seed);
    let report = kfold_split(&corpus, a.k, a.seed)?;
    fs::create_dir_all(&a.out_dir)?;
    for (i, ids) in report.split.folds.iter().enumerate() {
        let path = a.out_dir.join(format!("fold_{}.json", i + 1));
        write_json(
            &path,
            &json!({ "fold": i + 1, "k": a.k, "seed": a.seed, "doc_ids": ids }),
        )?;
        record.outputs.push(display(&path));
    }
    emit(&report, a.stats.as_deref(), record, stdout)
}
