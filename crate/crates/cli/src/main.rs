//! `mlvc`: generate synthetic data, train, evaluate, ensemble, sweep and
//! gradient-check multi-label sequence classifiers.
//!
//! Every failure exits nonzero after printing one line of the form
//! `error: kind=<kind> msg=<message>` to stderr.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mlvc_core::data::{self, DatasetSpec, SPLITS};
use mlvc_core::labelgraph::{self, LabelConfig};
use mlvc_core::metrics::{self, DEFAULT_K};
use mlvc_core::parallel::Execution;
use mlvc_core::trainer::{self, AdamState, Component, GradcheckDims, GradcheckReport, Model, ModelConfig, TrainEvent};

#[derive(Parser, Debug)]
#[command(name = "mlvc", version, about = "Multi-label video classification toolkit")]
struct Cli {
    /// Run every data-parallel stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset (train/validate/test splits).
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus a JSON-lines metrics log.
    Train(TrainArgs),
    /// Score a split with a checkpoint; prints GAP@k and writes predictions.
    Evaluate(EvaluateArgs),
    /// Average several prediction CSVs.
    Ensemble(EnsembleArgs),
    /// Train one model per candidate for a single component and rank them.
    Sweep(SweepArgs),
    /// Compare analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
    /// Dump label counts, co-occurrence counts and the correlation matrix.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    /// Generator spec (TOML); missing keys take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Model config (TOML); missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory written by `generate`.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log path [default: <out>.metrics.jsonl].
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Prediction CSV output.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug)]
struct EnsembleArgs {
    /// Comma-separated prediction CSVs.
    #[arg(long, value_delimiter = ',', required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Base model config (TOML).
    #[arg(long)]
    base: Option<PathBuf>,
    /// One of pooling, classifier, labelgraph, loss.
    #[arg(long)]
    component: String,
    /// Candidate list (TOML `[[candidates]]` tables).
    #[arg(long)]
    candidates: PathBuf,
    /// Dataset directory; candidates train on `train` and are scored on `validate`.
    #[arg(long)]
    data: PathBuf,
    /// Report CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Model config (TOML); its choices are checked at small dims.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Small-dimension overrides (TOML).
    #[arg(long)]
    dims: Option<PathBuf>,
    /// Check every pipeline combination instead of the configured one.
    #[arg(long)]
    grid: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Norm {
    Ochiai,
    Conditional,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "train")]
    split: String,
    #[arg(long, value_enum, default_value_t = Norm::Ochiai)]
    normalization: Norm,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
}

/// CLI-level failure carrying its own error-line kind.
#[derive(Debug)]
struct Failure {
    kind: &'static str,
    msg: String,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.msg)
    }
}

impl std::error::Error for Failure {}

fn fail(kind: &'static str, msg: impl Into<String>) -> anyhow::Error {
    Failure { kind, msg: msg.into() }.into()
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<mlvc_core::Error>() {
            return e.kind();
        }
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.kind;
        }
    }
    "cli"
}

/// One-line rendering of the whole cause chain.
fn error_line(err: &anyhow::Error) -> String {
    let msg = format!("{err:#}").replace(['\n', '\r'], " ");
    format!("error: kind={} msg={}", error_kind(err), msg)
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => ModelConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ModelConfig::default()),
    }
}

fn load_toml<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(p) = path else { return Ok(T::default()) };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    toml::from_str(&text).map_err(|e| fail("config", format!("{}: {e}", p.display())))
}

fn read_split(dir: &Path, name: &str) -> Result<data::Dataset> {
    if !SPLITS.contains(&name) {
        return Err(fail("input", format!("unknown split `{name}`, expected one of {SPLITS:?}")));
    }
    data::read_split(dir, name).with_context(|| format!("reading {name} split from {}", dir.display()))
}

fn generate(args: &GenerateArgs, exec: Execution) -> Result<()> {
    let spec: DatasetSpec = load_toml(args.spec.as_deref())?;
    let splits = data::generate_dataset(&spec, exec)?;
    data::write_splits(&splits, &spec, &args.out)?;
    let [a, b, c] = spec.split_sizes();
    println!("wrote {} (train {a}, validate {b}, test {c})", args.out.display());
    Ok(())
}

fn train(args: &TrainArgs, exec: Execution) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let mut train_ds = read_split(&args.data, "train")?;
    let val_ds = read_split(&args.data, "validate")?;
    let val = if cfg.train.merge_validation {
        train_ds = train_ds.merged(&val_ds)?;
        None
    } else {
        Some(&val_ds)
    };
    let mut model = Model::for_dataset(&cfg, &train_ds, exec)?;
    let mut adam = AdamState::from_config(&model.store, &cfg.train);

    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".metrics.jsonl");
        PathBuf::from(p)
    });
    let mut log = std::io::BufWriter::new(
        fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let mut io_err = None;
    trainer::train(&mut model, &mut adam, &train_ds, val, exec, &mut |event, _| {
        if let TrainEvent::Record(r) = event {
            let line = serde_json::to_string(r).expect("log record serializes");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                io_err = Some(e);
            }
            eprintln!("{line}");
        }
        Ok(())
    })?;
    if let Some(e) = io_err {
        return Err(e).context(format!("writing {}", log_path.display()));
    }
    trainer::write_checkpoint(&model, &adam, &args.out)?;
    println!("wrote {} after {} steps; log {}", args.out.display(), adam.t, log_path.display());
    Ok(())
}

fn evaluate(args: &EvaluateArgs, exec: Execution) -> Result<()> {
    let (model, _) = trainer::read_checkpoint(&args.ckpt).with_context(|| format!("reading {}", args.ckpt.display()))?;
    let ds = read_split(&args.data, &args.split)?;
    let (gap, preds) = trainer::evaluate(&model, &ds, args.k, exec)?;
    if let Some(csv) = &args.csv {
        metrics::write_predictions(&preds, csv)?;
    }
    println!("gap_at_{}={gap:.6}", args.k);
    Ok(())
}

fn ensemble(args: &EnsembleArgs) -> Result<()> {
    let members = args
        .inputs
        .iter()
        .map(|p| metrics::read_predictions(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let merged = trainer::ensemble_average(&members, args.k)?;
    metrics::write_predictions(&merged, &args.out)?;
    println!("wrote {} ({} videos, {} members)", args.out.display(), merged.len(), members.len());
    Ok(())
}

fn sweep(args: &SweepArgs, exec: Execution) -> Result<()> {
    let base = load_config(args.base.as_deref())?;
    let component: Component = args.component.parse()?;
    let text = fs::read_to_string(&args.candidates).with_context(|| format!("reading {}", args.candidates.display()))?;
    let candidates = trainer::parse_candidates(&text)?;
    let train_ds = read_split(&args.data, "train")?;
    let val_ds = read_split(&args.data, "validate")?;
    let report = trainer::greedy_sweep(&base, component, &candidates, &train_ds, &val_ds, exec);
    let csv = report.to_csv();
    match &args.out {
        Some(p) => {
            fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?;
            if let Some(best) = report.best() {
                println!("best {} gap_at_k={:.6}", best.name, best.gap.unwrap_or(f64::NAN));
            }
        }
        None => print!("{csv}"),
    }
    if report.best().is_none() {
        return Err(fail("sweep", "every candidate failed"));
    }
    Ok(())
}

fn print_report(r: &GradcheckReport) {
    let status = if r.passed { "PASS" } else { "FAIL" };
    println!("{status} {} max_rel_err={:.3e}", r.pipeline, r.max_rel_err);
    for g in &r.groups {
        println!("  {} ({} values) {:.3e}", g.name, g.size, g.max_rel_err);
    }
}

fn gradcheck(args: &GradcheckArgs, exec: Execution) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let dims: GradcheckDims = load_toml(args.dims.as_deref())?;
    let reports = if args.grid {
        trainer::gradcheck_grid(&cfg, &dims, exec)
            .into_iter()
            .collect::<mlvc_core::Result<Vec<_>>>()?
    } else {
        vec![trainer::gradcheck(&cfg, &dims, None)?]
    };
    reports.iter().for_each(print_report);
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(fail("gradcheck", format!("{failed} of {} pipelines exceed tolerance", reports.len())));
    }
    Ok(())
}

fn stats(args: &StatsArgs, exec: Execution) -> Result<()> {
    let ds = read_split(&args.data, &args.split)?;
    let norm = match args.normalization {
        Norm::Ochiai => labelgraph::Normalization::Ochiai,
        Norm::Conditional => labelgraph::Normalization::Conditional,
    };
    LabelConfig {
        normalization: norm,
        sparsity_threshold: args.threshold,
        ..LabelConfig::default()
    }
    .validate()?;
    fs::create_dir_all(&args.out)?;
    let counts = data::label_stats(&ds);
    fs::write(args.out.join("label_stats.csv"), data::label_stats_csv(&counts))?;
    let co = labelgraph::build_cooccurrence(&ds, exec)?;
    fs::write(args.out.join("cooccurrence.csv"), co.to_csv())?;
    let m = labelgraph::build_correlation(&co, norm, args.threshold);
    labelgraph::write_matrix(&m, &args.out.join("correlation.lgc1"))?;
    println!(
        "wrote label_stats.csv, cooccurrence.csv, correlation.lgc1 to {} ({} videos, {} classes)",
        args.out.display(),
        ds.len(),
        ds.num_classes
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let exec = if cli.sequential { Execution::Sequential } else { Execution::Parallel };
    match &cli.command {
        Command::Generate(a) => generate(a, exec),
        Command::Train(a) => train(a, exec),
        Command::Evaluate(a) => evaluate(a, exec),
        Command::Ensemble(a) => ensemble(a),
        Command::Sweep(a) => sweep(a, exec),
        Command::Gradcheck(a) => gradcheck(a, exec),
        Command::Stats(a) => stats(a, exec),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.kind().to_string();
            eprint!("{}", e.render());
            eprintln!("error: kind=usage msg={msg}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
