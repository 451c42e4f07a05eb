//! `dcenorm` command-line front-end.
//!
//! Exit codes: 0 success, 1 validation error, 2 I/O error. Failures print a
//! single JSON line `{"error": "validation" | "io", "message": "..."}` to
//! standard error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use dcenorm::evaluation::{
    auc_rows_to_csv, build_report, feature_aucs, read_labels_csv, tissue_intensities, GroupKey, ReportInputs,
    TissueIntensities,
};
use dcenorm::features::{read_features_csv, write_features_csv};
use dcenorm::phantom::{generate_phantom, load_phantom_config, PhantomConfig};
use dcenorm::pipeline::StageOutput;
use dcenorm::volume::write_atomic;
use dcenorm::{DatasetManifest, NormalizationModel, Pipeline, PipelineConfig};

#[derive(Parser)]
#[command(name = "dcenorm", version, about = "Tissue-anchored intensity normalization for breast DCE-MRI")]
struct Cli {
    /// Pipeline configuration (JSON); also accepted after the pipeline
    /// subcommands, where it takes precedence.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Phantom(PhantomArgs),
    /// Segment every subject and write masks plus a manifest referencing them.
    Segment(SegmentArgs),
    /// Select the archetype subject and write the model.
    Train(TrainArgs),
    /// Map every subject into the model's intensity space.
    Normalize(NormalizeArgs),
    /// Extract features F1-F15.
    Features(FeaturesArgs),
    /// Compare feature distributions between scanner-parameter groups.
    Evaluate(EvaluateArgs),
    /// Single-feature ROC AUC against binary labels.
    Auc(AucArgs),
}

#[derive(Args)]
struct ConfigArg {
    /// Pipeline configuration (JSON).
    #[arg(long = "config")]
    path: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SegmentArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write every training subject's anchors (JSON).
    #[arg(long)]
    emit_anchors: Option<PathBuf>,
}

#[derive(Args)]
struct NormalizeArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Directory for per-subject mapping curves (`<id>_mapping.csv`).
    #[arg(long)]
    emit_mapping: Option<PathBuf>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Median filter radius applied before extraction.
    #[arg(long)]
    denoise_median: Option<usize>,
    /// Directory of `<id>_mask` files overriding the manifest's masks.
    #[arg(long)]
    masks: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    before: PathBuf,
    #[arg(long)]
    after: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Grouping keys, comma separated (te, tr, field); all by default.
    #[arg(long, value_delimiter = ',')]
    group_by: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Normalized dataset; adds before/after tissue intensity tables.
    #[arg(long)]
    after_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct AucArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl From<dcenorm::Error> for CliError {
    fn from(e: dcenorm::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn json_line(&self) -> String {
        let kind = match self {
            CliError::Validation(_) => "validation",
            CliError::Io(_) => "io",
        };
        serde_json::json!({ "error": kind, "message": self.to_string() }).to_string()
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let err = CliError::Validation(first.to_string());
            eprintln!("{}", err.json_line());
            return ExitCode::from(err.exit_code());
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(CliError::Validation("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let top = cli.config;
    let pipeline = |sub: &ConfigArg| -> CliResult<Pipeline> {
        let config = match sub.path.as_ref().or(top.as_ref()) {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        Ok(Pipeline::new(config)?)
    };
    match cli.command {
        Command::Phantom(a) => phantom(a),
        Command::Segment(a) => segment(&pipeline(&a.config)?, a),
        Command::Train(a) => train(&pipeline(&a.config)?, a),
        Command::Normalize(a) => normalize(&pipeline(&a.config)?, a),
        Command::Features(a) => features(&pipeline(&a.config)?, a),
        Command::Evaluate(a) => evaluate(&pipeline(&a.config)?, a),
        Command::Auc(a) => auc(a),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn report_skipped<T>(stage: &str, out: &StageOutput<T>) {
    if !out.skipped.is_empty() {
        warn!("{stage}: {} subject(s) skipped", out.skipped.len());
    }
    info!("{stage}: {} subject(s) done", out.results.len());
}

fn phantom(a: PhantomArgs) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => load_phantom_config(p)?,
        None => PhantomConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    create_dir(&a.out)?;
    let manifest = generate_phantom(&cfg, &a.out)?;
    info!("wrote {} subjects to {}", manifest.len(), a.out.display());
    Ok(())
}

fn segment(p: &Pipeline, a: SegmentArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    create_dir(&a.out_dir)?;
    let out = p.segment_dataset(&manifest, &a.out_dir)?;
    report_skipped("segment", &out);
    Ok(())
}

fn train(p: &Pipeline, a: TrainArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let (model, anchors) = p.train(&manifest)?;
    report_skipped("train", &anchors);
    if let Some(path) = &a.emit_anchors {
        let mut text = serde_json::to_string_pretty(&anchors.results).expect("anchors serialize");
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
    }
    model.save(&a.out)?;
    info!("archetype {}", model.archetype_subject_id);
    Ok(())
}

fn normalize(p: &Pipeline, a: NormalizeArgs) -> CliResult<()> {
    let model = NormalizationModel::load(&a.model)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    create_dir(&a.out_dir)?;
    let out = p.normalize_dataset(&manifest, &model, &a.out_dir, a.emit_mapping.as_deref())?;
    report_skipped("normalize", &out);
    Ok(())
}

fn features(p: &Pipeline, a: FeaturesArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let radius = a.denoise_median.or(p.config.features.denoise_median);
    if radius == Some(0) {
        return Err(CliError::Validation("--denoise-median must be positive".into()));
    }
    let out = p.dataset_features(&manifest, a.masks.as_deref(), radius)?;
    report_skipped("features", &out);
    write_features_csv(&out.results, &a.out)?;
    Ok(())
}

fn tissue_table(p: &Pipeline, manifest: &DatasetManifest) -> CliResult<Vec<TissueIntensities>> {
    let mut rows = Vec::new();
    for entry in &manifest.subjects {
        let series = manifest.load_series(entry)?;
        match p.subject_mask(manifest, entry, &series, None) {
            Ok(mask) => rows.push(tissue_intensities(&series, &mask)?),
            Err(e) if e.is_io() => return Err(e.into()),
            Err(e) => warn!("tissue table: skipping {}: {e}", entry.subject_id),
        }
    }
    Ok(rows)
}

fn evaluate(p: &Pipeline, a: EvaluateArgs) -> CliResult<()> {
    let manifest = DatasetManifest::load(&a.manifest)?;
    let before = read_features_csv(&a.before)?;
    let after = read_features_csv(&a.after)?;
    let keys: Vec<GroupKey> = if a.group_by.is_empty() {
        GroupKey::ALL.to_vec()
    } else {
        a.group_by.iter().map(|k| k.trim().parse()).collect::<dcenorm::Result<_>>()?
    };
    let (tissues_before, tissues_after) = match &a.after_manifest {
        Some(path) => {
            let normalized = DatasetManifest::load(path)?;
            (Some(tissue_table(p, &manifest)?), Some(tissue_table(p, &normalized)?))
        }
        None => (None, None),
    };
    let inputs = ReportInputs {
        manifest: &manifest,
        features_before: &before,
        features_after: &after,
        tissues_before: tissues_before.as_deref(),
        tissues_after: tissues_after.as_deref(),
    };
    let report = build_report(&inputs, &keys, &p.config.evaluation)?;
    report.save(&a.out)?;
    Ok(())
}

fn auc(a: AucArgs) -> CliResult<()> {
    let features = read_features_csv(&a.features)?;
    let labels = read_labels_csv(&a.labels)?;
    let rows = feature_aucs(&features, &labels);
    write_atomic(&a.out, auc_rows_to_csv(&rows).as_bytes())?;
    Ok(())
}
