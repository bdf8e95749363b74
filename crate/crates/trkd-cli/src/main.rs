//! One binary, subcommand style: teacher training, distillation,
//! verification-style evaluation, offline partition analysis, identity
//! self-checks, and cutoff-schedule dumps.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure/divergence, 4 I/O or file-format error.

mod config;

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trkd::dump;
use trkd::error::Error as TrkdError;
use trkd::eval;
use trkd::pipeline::{
    self, distill_student, evaluate_eer, gen_dataset, load_checkpoint, save_checkpoint,
    train_teacher,
};
use trkd::schedule::TauScheduleConfig;

use config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_IO: u8 = 4;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self { code: EXIT_IO, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<TrkdError> for CliError {
    fn from(e: TrkdError) -> Self {
        let code = match &e {
            TrkdError::Io { .. }
            | TrkdError::Format(_)
            | TrkdError::Version { .. }
            | TrkdError::Truncated { .. }
            | TrkdError::Validation(_) => EXIT_IO,
            TrkdError::Diverged { .. } => EXIT_NUMERIC,
            _ => EXIT_CONFIG,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(
    name = "trkd",
    version,
    about = "Triage knowledge distillation pipeline",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the teacher with the margin-softmax loss only.
    TrainTeacher(TrainTeacherArgs),
    /// Distill a student from a frozen teacher checkpoint.
    Distill(DistillArgs),
    /// Compute the held-out equal error rate of a checkpoint.
    Evaluate(EvaluateArgs),
    /// Summarize confusion/background partitions of a logit dump.
    Analyze(AnalyzeArgs),
    /// Run the randomized identity and gradient suites.
    Selfcheck(SelfcheckArgs),
    /// Emit (step, cutoff) rows of the curriculum for plotting.
    ScheduleDump(ScheduleDumpArgs),
}

#[derive(Args)]
struct TrainTeacherArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Where to write the teacher checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// Optional JSONL log of per-epoch loss/accuracy records.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Optional TKLD export of the trained teacher's train-set logits.
    #[arg(long)]
    export_dump: Option<PathBuf>,
    /// Override the training seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the epoch count from the config.
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct DistillArgs {
    #[arg(long)]
    config: PathBuf,
    /// Teacher checkpoint to distill from.
    #[arg(long)]
    teacher: PathBuf,
    /// Where to write the student checkpoint.
    #[arg(long)]
    out: PathBuf,
    /// JSONL log of per-step loss components.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Distillation method: none|kd|dkd|trkd|mse|cos (overrides config).
    #[arg(long)]
    method: Option<String>,
    /// Pin the cutoff to a fixed value instead of the curriculum.
    #[arg(long)]
    tau_fixed: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Checkpoint to evaluate on the held-out split.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Optional score-file export ("tgt|non score" per line).
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    pairs_per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Logit dump (TKLD) to analyze.
    #[arg(long)]
    dump: PathBuf,
    /// Comma-separated cutoff list, each in (0, 1].
    #[arg(long, value_delimiter = ',', required = true)]
    tau: Vec<f64>,
    /// Softmax temperature applied before partitioning.
    #[arg(long, default_value_t = 4.0)]
    temperature: f64,
    /// Write JSONL here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelfcheckArgs {
    /// Trials per randomized suite.
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 20250809)]
    seed: u64,
    /// Negative-control hook: inject a fake residual so the suite fails.
    #[arg(long, hide = true)]
    tamper: bool,
}

#[derive(Args)]
struct ScheduleDumpArgs {
    #[arg(long, default_value_t = 1.0)]
    tau_init: f64,
    #[arg(long, default_value_t = 0.05)]
    tau_final: f64,
    #[arg(long, default_value_t = 0.001)]
    gamma: f64,
    #[arg(long, default_value_t = 1000)]
    k_start: u64,
    #[arg(long, default_value_t = 6000)]
    k_stop: u64,
    /// Number of rows to emit (steps 0..N-1).
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::io(format!("cannot write {}: {e}", path.display())))
}

fn jsonl<T: serde::Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("serializable record"));
        out.push('\n');
    }
    out
}

fn cmd_train_teacher(args: &TrainTeacherArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let data = gen_dataset(&cfg.dataset_config()?)?;
    let spec = cfg.teacher_spec()?;
    let spe = cfg.steps_per_epoch(data.train.len());
    let train_cfg = cfg.train_config(
        pipeline::DistillMethod::None,
        spe,
        None,
        args.seed,
        args.epochs,
    )?;
    let aam = cfg.aam_hyper()?;

    let run = train_teacher(&data, &spec, &train_cfg, &aam)?;
    save_checkpoint(&run.checkpoint, &args.out)?;
    if let Some(log) = &args.log {
        write_text(log, &jsonl(&run.epochs))?;
    }
    if let Some(dump_path) = &args.export_dump {
        let mut logits = Vec::with_capacity(data.train.len() * data.num_classes);
        for x in &data.train.inputs {
            let emb = run.checkpoint.mlp.forward(x)?.embedding().to_vec();
            let scores = cosine_logits(&run.checkpoint.class_weights, &emb, aam.scale)?;
            logits.extend(scores.iter().map(|&v| v as f32));
        }
        let labels: Vec<u32> = data.train.labels.iter().map(|&l| l as u32).collect();
        let dump = dump::LogitDump::new(data.num_classes as u32, logits, labels)?;
        dump::write_dump(&dump, dump_path)?;
    }
    let last = run.epochs.last().expect("at least one epoch");
    println!(
        "teacher trained: epochs={} first_step_loss={:.6} final_loss={:.6} train_accuracy={:.4}",
        run.epochs.len(),
        run.first_step_loss,
        last.mean_loss,
        last.train_accuracy
    );
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cosine_logits(head: &[Vec<f64>], embedding: &[f64], scale: f64) -> Result<Vec<f64>, CliError> {
    let norm = embedding.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= 0.0 {
        return Err(CliError::numeric("zero-norm embedding while exporting logits"));
    }
    Ok(head
        .iter()
        .map(|w| scale * w.iter().zip(embedding).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect())
}

fn cmd_distill(args: &DistillArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    if !args.teacher.exists() {
        return Err(CliError::io(format!(
            "teacher checkpoint {} does not exist; run `trkd train-teacher` first",
            args.teacher.display()
        )));
    }
    let teacher = load_checkpoint(&args.teacher)?;
    let data = gen_dataset(&cfg.dataset_config()?)?;
    let spec = cfg.student_spec()?;
    let spe = cfg.steps_per_epoch(data.train.len());
    let method = cfg.method(args.method.as_deref())?;
    let train_cfg = cfg.train_config(method, spe, args.tau_fixed, args.seed, args.epochs)?;
    let aam = cfg.aam_hyper()?;

    let run = distill_student(&teacher, &aam, &data, &spec, &train_cfg)?;
    save_checkpoint(&run.checkpoint, &args.out)?;
    if let Some(log) = &args.log {
        write_text(log, &jsonl(&run.log))?;
    }
    let last = run.log.last().expect("at least one step");
    println!(
        "student distilled: method={method} steps={} final_loss_total={:.6}",
        run.log.len(),
        last.loss_total
    );
    println!("checkpoint written to {}", args.out.display());
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(&args.config)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let data = gen_dataset(&cfg.dataset_config()?)?;
    let pairs = args.pairs_per_class.unwrap_or(cfg.eval.pairs_per_class);
    let seed = args.seed.unwrap_or(cfg.eval.seed);
    let (eer, scores) = evaluate_eer(&ckpt.mlp, &data.held_out, pairs, seed)?;
    if let Some(path) = &args.scores {
        eval::write_score_file(&scores, path)?;
    }
    println!(
        "eer_percent {:.6} targets {} nontargets {} skipped_classes {}",
        eer * 100.0,
        scores.target_scores.len(),
        scores.nontarget_scores.len(),
        scores.skipped_classes
    );
    Ok(())
}

fn cmd_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    for &tau in &args.tau {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(CliError::config(format!("--tau value {tau} outside (0, 1]")));
        }
    }
    let dump = dump::read_dump(&args.dump)?;
    let summaries = dump::analyze_partitions(&dump, &args.tau, args.temperature)?;
    let text = jsonl(&summaries);
    match &args.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_selfcheck(args: &SelfcheckArgs) -> Result<(), CliError> {
    let reports = trkd::check::run_selfcheck(args.trials, args.seed, args.tamper);
    let mut all_ok = true;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in &reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        all_ok &= r.passed();
        writeln!(
            out,
            "{status} {name:<32} trials={trials:<6} max_residual={res:.3e} tolerance={tol:.0e}",
            name = r.name,
            trials = r.trials,
            res = r.max_residual,
            tol = r.tolerance
        )
        .map_err(|e| CliError::io(e.to_string()))?;
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::numeric("selfcheck tolerance violated"))
    }
}

fn cmd_schedule_dump(args: &ScheduleDumpArgs) -> Result<(), CliError> {
    if args.steps == 0 {
        return Err(CliError::config("--steps must be positive"));
    }
    let cfg = TauScheduleConfig::new(
        args.tau_init,
        args.tau_final,
        args.gamma,
        args.k_start,
        args.k_stop,
    )
    .map_err(|e| CliError::config(e.to_string()))?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for k in 0..args.steps {
        writeln!(out, "{k}\t{tau:.12}", tau = cfg.tau_at(k))
            .map_err(|e| CliError::io(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::TrainTeacher(args) => cmd_train_teacher(args),
        Command::Distill(args) => cmd_distill(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Analyze(args) => cmd_analyze(args),
        Command::Selfcheck(args) => cmd_selfcheck(args),
        Command::ScheduleDump(args) => cmd_schedule_dump(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
