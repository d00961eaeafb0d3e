//! `reskd` — residual-guided distillation runs from the command line.
//!
//! Subcommands: `gen-data`, `distill`, `infer`, `analyze-gi`, `analyze-pca`,
//! `sweep-th`. All randomness flows from explicit seeds, so identical
//! invocations produce identical outputs. Exit codes: 0 success, 2 usage or
//! config error, 3 stage-cap termination, 4 I/O error, 5 numeric failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reskd::bundle::{
    load_bundle, save_bundle, write_inference_csv, write_pca_csv, write_stage_metrics_csv,
    write_sweep_csv, PcaRow,
};
use reskd::data::{gen_blobs, gen_spirals, read_dataset_csv, write_dataset_csv, write_json, Dataset};
use reskd::gi::residual_chain_report;
use reskd::infer::{batch_adaptive_infer_with_threshold, threshold_sweep, AdaptiveMode};
use reskd::pipeline::{run_reskd, DistillConfig, Termination};
use reskd::spectral::pca2d;
use reskd::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_STAGE_CAP: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_NUMERIC: u8 = 5;

#[derive(Parser)]
#[command(name = "reskd", version, about = "Residual-guided knowledge distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset CSV.
    GenData(GenDataArgs),
    /// Train a full residual-distillation artifact from a config and a
    /// dataset.
    Distill(DistillArgs),
    /// Run (optionally sample-adaptive) inference with a trained artifact.
    Infer(InferArgs),
    /// Write the per-stage gradient-informativeness report.
    AnalyzeGi(AnalyzeGiArgs),
    /// Project teacher and student logits into the teacher's principal
    /// plane.
    AnalyzePca(AnalyzePcaArgs),
    /// Sweep the adaptive-inference threshold and tabulate accuracy vs cost.
    SweepTh(SweepThArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DataKind {
    Blobs,
    Spirals,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    kind: DataKind,
    #[arg(long)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_per_class: usize,
    /// Number of classes (blobs only).
    #[arg(long, default_value_t = 2)]
    classes: usize,
    /// Feature dimension (blobs only).
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Cluster standard deviation (blobs only).
    #[arg(long, default_value_t = 0.6)]
    spread: f64,
    /// Spiral turns (spirals only).
    #[arg(long, default_value_t = 1.5)]
    turns: f64,
    /// Coordinate noise standard deviation (spirals only).
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
}

#[derive(Args)]
struct DistillArgs {
    /// Distillation config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Training dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Output artifact directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Additive,
    Exact,
}

impl From<ModeArg> for AdaptiveMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Additive => AdaptiveMode::Additive,
            ModeArg::Exact => AdaptiveMode::Exact,
        }
    }
}

#[derive(Args)]
struct InferArgs {
    /// Artifact directory written by `distill`.
    #[arg(long)]
    artifact: PathBuf,
    /// Dataset CSV to run on.
    #[arg(long)]
    data: PathBuf,
    /// Per-sample truncation against the artifact's energy threshold.
    #[arg(long)]
    adaptive: bool,
    /// Energy accumulation rule for adaptive mode.
    #[arg(long, value_enum, default_value = "additive")]
    mode: ModeArg,
    /// Threshold override (defaults to the artifact's own).
    #[arg(long)]
    th: Option<f64>,
    /// Predictions CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Cost report JSON path (default: `<out>` with extension
    /// `report.json`).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeArg {
    /// The run's own validation split, re-derived from the artifact's
    /// config (pass the training CSV as --data).
    Val,
    /// Every row of --data.
    All,
}

#[derive(Args)]
struct AnalyzeGiArgs {
    #[arg(long)]
    artifact: PathBuf,
    /// Probe dataset CSV.
    #[arg(long)]
    data: PathBuf,
    /// Which rows of --data to probe.
    #[arg(long, value_enum, default_value = "val")]
    probe: ProbeArg,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzePcaArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated combined-student stages to project (e.g. `0,1,2`).
    #[arg(long, value_delimiter = ',')]
    stages: Vec<usize>,
    /// Projection CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepThArgs {
    #[arg(long)]
    artifact: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Number of evenly spaced thresholds from 0 to n+1.
    #[arg(long, default_value_t = 10)]
    points: usize,
    #[arg(long, value_enum, default_value = "additive")]
    mode: ModeArg,
    /// Sweep table CSV path.
    #[arg(long)]
    out: PathBuf,
}

/// A command outcome that already knows its exit code.
enum Failure {
    Usage(String),
    Io(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
            Failure::Numeric(_) => EXIT_NUMERIC,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain(_) | Error::Validation(_) | Error::Shape { .. } | Error::Index { .. } => {
                Failure::Usage(e.to_string())
            }
            Error::Io(_) | Error::Parse { .. } | Error::Csv(_) => Failure::Io(e.to_string()),
            Error::Training { .. } | Error::Optimizer(_) | Error::Trace(_) => {
                Failure::Numeric(e.to_string())
            }
        }
    }
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    read_dataset_csv(path).map_err(Failure::from)
}

fn run_gen_data(args: &GenDataArgs) -> Result<u8, Failure> {
    let data = match args.kind {
        DataKind::Blobs => gen_blobs(args.seed, args.n_per_class, args.classes, args.dim, args.spread)?,
        DataKind::Spirals => gen_spirals(args.seed, args.n_per_class, args.turns, args.noise)?,
    };
    write_dataset_csv(&data, &args.out)?;
    eprintln!(
        "wrote {} samples ({} classes, {} features) to {}",
        data.len(),
        data.k,
        data.feature_dim(),
        args.out.display()
    );
    Ok(0)
}

fn run_distill(args: &DistillArgs) -> Result<u8, Failure> {
    let config_text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Io(format!("{}: {e}", args.config.display())))?;
    let config: DistillConfig = serde_json::from_str(&config_text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.config.display())))?;
    config.validate()?;
    let data = load_data(&args.data)?;
    let artifact = run_reskd(&data, &config)?;
    save_bundle(&artifact, &config, &args.out)?;
    write_stage_metrics_csv(&artifact.stages, &args.out.join("metrics.csv"))?;
    for s in &artifact.stages {
        eprintln!(
            "stage {}: val_energy {:.6} train_acc {:.4} val_acc {:.4} l2_to_teacher {:.6}",
            s.stage, s.val_energy, s.train_accuracy, s.val_accuracy, s.mean_l2_to_teacher
        );
    }
    eprintln!(
        "artifact with {} res-student(s) written to {}",
        artifact.num_res_students(),
        args.out.display()
    );
    if artifact.termination == Termination::StageCap {
        eprintln!("warning: stage cap reached before the energy criterion");
        return Ok(EXIT_STAGE_CAP);
    }
    Ok(0)
}

fn run_infer(args: &InferArgs) -> Result<u8, Failure> {
    let (artifact, _) = load_bundle(&args.artifact)?;
    let data = load_data(&args.data)?;
    let n = artifact.num_res_students();
    let threshold = if args.adaptive {
        args.th.unwrap_or(artifact.th_energy)
    } else {
        // Full-chain inference is the unreachable-threshold special case.
        (n + 1) as f64
    };
    let (records, report) =
        batch_adaptive_infer_with_threshold(&artifact, &data, args.mode.into(), threshold)?;
    write_inference_csv(&records, data.k, n, &args.out)?;
    let report_path = args
        .report
        .clone()
        .unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(&report, &report_path)?;
    eprintln!(
        "{} samples, mean evaluated stages {:.3}, adaptive acc {:.4}, full acc {:.4}",
        report.n_samples, report.mean_evaluated_stages, report.adaptive_accuracy, report.full_accuracy
    );
    Ok(0)
}

fn run_analyze_gi(args: &AnalyzeGiArgs) -> Result<u8, Failure> {
    let (artifact, config) = load_bundle(&args.artifact)?;
    let data = load_data(&args.data)?;
    let probe = match args.probe {
        ProbeArg::Val => reskd::pipeline::validation_split(&data, &config)?.1.x,
        ProbeArg::All => data.x,
    };
    let report = residual_chain_report(&artifact, &probe)?;
    write_json(&report, &args.out)?;
    for s in &report.stages {
        eprintln!(
            "stage {}: gi_hat/C1 {:.6} delta {} k {}",
            s.stage,
            s.gi_hat_over_c1,
            s.delta_gi.map_or("-".into(), |d| format!("{d:.6}")),
            s.k_factor.map_or("undefined".into(), |k| format!("{k:.4}")),
        );
    }
    Ok(0)
}

fn run_analyze_pca(args: &AnalyzePcaArgs) -> Result<u8, Failure> {
    let (artifact, _) = load_bundle(&args.artifact)?;
    let data = load_data(&args.data)?;
    let n = artifact.num_res_students();
    if let Some(&bad) = args.stages.iter().find(|&&s| s > n) {
        return Err(Failure::Usage(format!(
            "stage {bad} out of range: artifact has {n} res-student(s)"
        )));
    }
    // Fit the plane on the teacher's logits; project everyone into it so
    // stage-to-stage drift is comparable against a fixed teacher cloud.
    let teacher_logits = artifact.teacher.logits(&data.x)?;
    let projection = pca2d(&teacher_logits)?;
    let mut rows = Vec::new();
    for i in 0..data.len() {
        rows.push(PcaRow {
            sample_id: i,
            pc1: projection.coords.get(i, 0),
            pc2: projection.coords.get(i, 1),
            source_tag: "teacher".into(),
        });
    }
    for &stage in &args.stages {
        let logits = artifact.combined_logits(&data.x, stage)?;
        let coords = projection.project(&logits)?;
        for i in 0..data.len() {
            rows.push(PcaRow {
                sample_id: i,
                pc1: coords.get(i, 0),
                pc2: coords.get(i, 1),
                source_tag: format!("student_stage_{stage}"),
            });
        }
    }
    write_pca_csv(&rows, &args.out)?;
    eprintln!(
        "projected teacher + stages {:?} of {} samples to {}",
        args.stages,
        data.len(),
        args.out.display()
    );
    Ok(0)
}

fn run_sweep_th(args: &SweepThArgs) -> Result<u8, Failure> {
    if args.points < 2 {
        return Err(Failure::Usage("--points must be at least 2".into()));
    }
    let (artifact, _) = load_bundle(&args.artifact)?;
    let data = load_data(&args.data)?;
    let n = artifact.num_res_students();
    let top = (n + 1) as f64;
    let thresholds: Vec<f64> = (0..args.points)
        .map(|i| top * i as f64 / (args.points - 1) as f64)
        .collect();
    let rows = threshold_sweep(&artifact, &data, args.mode.into(), &thresholds)?;
    write_sweep_csv(&rows, &args.out)?;
    eprintln!("{} sweep rows written to {}", rows.len(), args.out.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version print and exit 0; real usage errors exit 2.
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::GenData(args) => run_gen_data(args),
        Command::Distill(args) => run_distill(args),
        Command::Infer(args) => run_infer(args),
        Command::AnalyzeGi(args) => run_analyze_gi(args),
        Command::AnalyzePca(args) => run_analyze_pca(args),
        Command::SweepTh(args) => run_sweep_th(args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
