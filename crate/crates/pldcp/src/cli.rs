//! Command-line surface: argument parsing, config resolution, and dispatch
//! into the library. Config precedence is defaults < `--config` JSON < flags;
//! every artifact-writing run also emits a `run manifest` recording the
//! command line, resolved config, dataset checksum, and timestamps, and
//! refuses to overwrite existing outputs unless `--force` is passed.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dataset::{
    dataset_checksum, generate, load_dataset, loso_splits, save_dataset, Dataset, DomainKey,
    Manifest, Protocol, Sample, SourceDomainSet, SynthConfig,
};
use crate::error::{Error, Result};
use crate::experiments::{
    self, run_ablation, run_loso, run_noise_sweep, write_confusion_csv, write_embeddings_csv,
    write_folds_csv, write_losses_csv, write_prototypes_csv, write_summary_json, LosoReport,
    Strategy,
};
use crate::objectives::{check_scenario, fd_check, LossWeights};
use crate::prototypes::predict;
use crate::signal::{extract_features, read_recording, FeatureConfig, LdsParams};
use crate::trainer::{
    train, AblationFlags, Checkpoint, GrlSchedule, OptimizerKind, TrainConfig,
};

/// Gradient checks pass below this relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(
    name = "pldcp",
    version,
    about = "Subject-independent EEG emotion recognition via prototype inference over disentangled features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract band-power entropy features from raw recordings into a dataset
    Extract(ExtractArgs),
    /// Generate a synthetic multi-subject dataset
    Synth(SynthArgs),
    /// Train on all subjects of a dataset and write a checkpoint
    Train(TrainArgs),
    /// Predict labels for a dataset with a trained checkpoint
    Predict(PredictArgs),
    /// Leave-one-subject-out evaluation
    Loso(LosoArgs),
    /// Label-noise robustness sweep over LOSO runs
    NoiseSweep(NoiseSweepArgs),
    /// Ablation table: the full model plus one row per disabled component
    Ablate(AblateArgs),
    /// Finite-difference check of the training objective's gradients
    Gradcheck(GradcheckArgs),
    /// Write every sample's disentangled features to CSV
    ExportEmbeddings(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    SingleSession,
    CrossSession,
}

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Protocol {
        match p {
            ProtocolArg::SingleSession => Protocol::SingleSession,
            ProtocolArg::CrossSession => Protocol::CrossSession,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainKeyArg {
    Subject,
    SubjectSession,
}

impl From<DomainKeyArg> for DomainKey {
    fn from(k: DomainKeyArg) -> DomainKey {
        match k {
            DomainKeyArg::Subject => DomainKey::Subject,
            DomainKeyArg::SubjectSession => DomainKey::SubjectSession,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Pairwise,
    Pointwise,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Strategy {
        match s {
            StrategyArg::Pairwise => Strategy::Pairwise,
            StrategyArg::Pointwise => Strategy::Pointwise,
        }
    }
}

/// Training configuration shared by train/loso/noise-sweep/ablate.
/// Precedence: built-in defaults, then the `--config` file, then flags.
#[derive(Args)]
struct TrainOpts {
    /// JSON file with a partial or full training config
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Width of the shallow extractor's hidden layer
    #[arg(long)]
    hidden_shallow: Option<usize>,
    /// Width of the disentangled feature space
    #[arg(long)]
    hidden: Option<usize>,
    /// "sgd" or "adam"
    #[arg(long)]
    optimizer: Option<String>,
    /// Reversal-strength schedule: "fixed", "fixed:<lambda>", or "dann"
    #[arg(long)]
    grl: Option<String>,
    /// Loss weights as "cls,dom,pair,beta"
    #[arg(long)]
    weights: Option<String>,
    /// Comma-separated ablation flags (e.g. "no_pairwise,no_dom_disc") or "none"
    #[arg(long)]
    ablation: Option<String>,
}

impl TrainOpts {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::io(format!("reading config {}", path.display()), e))?;
                serde_json::from_str::<TrainConfig>(&text)?
            }
            None => TrainConfig::default(),
        };
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.hidden_shallow {
            cfg.hidden_shallow = v;
        }
        if let Some(v) = self.hidden {
            cfg.hidden = v;
        }
        if let Some(s) = &self.optimizer {
            cfg.optimizer = parse_optimizer(s)?;
        }
        if let Some(s) = &self.grl {
            cfg.grl = parse_grl(s)?;
        }
        if let Some(s) = &self.weights {
            cfg.weights = parse_weights(s)?;
        }
        if let Some(s) = &self.ablation {
            cfg.ablation = parse_ablation(s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind> {
    match s {
        "sgd" => Ok(OptimizerKind::Sgd),
        "adam" => Ok(OptimizerKind::default()),
        other => Err(Error::Config(format!(
            "unknown optimizer {other:?} (expected \"sgd\" or \"adam\")"
        ))),
    }
}

fn parse_grl(s: &str) -> Result<GrlSchedule> {
    if s == "dann" {
        return Ok(GrlSchedule::DannWarmup);
    }
    if s == "fixed" {
        return Ok(GrlSchedule::Fixed { lambda: 1.0 });
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        let lambda: f64 = rest
            .parse()
            .map_err(|_| Error::Config(format!("cannot parse reversal strength from {s:?}")))?;
        return Ok(GrlSchedule::Fixed { lambda });
    }
    Err(Error::Config(format!(
        "unknown GRL schedule {s:?} (expected \"fixed\", \"fixed:<lambda>\", or \"dann\")"
    )))
}

fn parse_weights(s: &str) -> Result<LossWeights> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "--weights expects four comma-separated values cls,dom,pair,beta, got {s:?}"
        )));
    }
    let vals: Vec<f64> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse loss weight {p:?}")))
        })
        .collect::<Result<_>>()?;
    Ok(LossWeights {
        cls: vals[0],
        dom: vals[1],
        pair: vals[2],
        beta: vals[3],
    })
}

fn parse_ablation(s: &str) -> Result<AblationFlags> {
    let mut flags = AblationFlags::default();
    if s == "none" || s.is_empty() {
        return Ok(flags);
    }
    for part in s.split(['+', ',']) {
        match part.trim() {
            "no_domain_prototype" => flags.no_domain_prototype = true,
            "no_dom_disc" => flags.no_dom_disc = true,
            "no_cls_disc" => flags.no_cls_disc = true,
            "no_pairwise" => flags.no_pairwise = true,
            "no_bilinear_s" => flags.no_bilinear_s = true,
            "no_soft_reg" => flags.no_soft_reg = true,
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation flag {other:?} (expected no_domain_prototype, no_dom_disc, \
                     no_cls_disc, no_pairwise, no_bilinear_s, no_soft_reg)"
                )))
            }
        }
    }
    Ok(flags)
}

#[derive(Args)]
struct ExtractArgs {
    /// Raw recording CSVs, each with a JSON sidecar carrying sample rate and labels
    #[arg(long, num_args = 1.., required = true)]
    recordings: Vec<PathBuf>,
    /// Output dataset CSV (manifest sidecar is written next to it)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    window_seconds: f64,
    /// Skip the per-feature temporal smoothing stage
    #[arg(long)]
    no_lds: bool,
    /// Skip the broadband 0.3-50 Hz prefilter
    #[arg(long)]
    no_prefilter: bool,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Output dataset CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    #[arg(long, default_value_t = 1)]
    sessions: usize,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 60)]
    samples_per_class: usize,
    #[arg(long, default_value_t = 16)]
    latent_dim: usize,
    #[arg(long, default_value_t = 64)]
    feature_dim: usize,
    /// Distance scale between class centers in latent space
    #[arg(long, default_value_t = 10.0)]
    class_separation: f64,
    /// Norm of each subject's latent offset
    #[arg(long, default_value_t = 2.0)]
    subject_shift: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output run directory (config.json, losses.csv, checkpoint.json, prototypes.csv)
    #[arg(long)]
    out: Option<PathBuf>,
    /// What counts as a domain when grouping samples
    #[arg(long, value_enum, default_value = "subject")]
    domain_key: DomainKeyArg,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Output predictions CSV
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct LosoArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "single-session")]
    protocol: ProtocolArg,
    /// Output run directory (summary.json, folds.csv, confusion CSVs)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fold-level parallelism
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct NoiseSweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "single-session")]
    protocol: ProtocolArg,
    /// Source-label corruption ratios, e.g. 0.05,0.1,0.2,0.3
    #[arg(long, value_delimiter = ',', required = true)]
    ratios: Vec<f64>,
    /// Class losses to compare (default both)
    #[arg(long, value_enum, value_delimiter = ',', default_values = ["pairwise", "pointwise"])]
    strategies: Vec<StrategyArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value = "single-session")]
    protocol: ProtocolArg,
    /// Rows as comma-separated flag sets; '+' combines flags within a row.
    /// Default: one row per single component.
    #[arg(long)]
    flags: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    /// Central-difference step
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Output CSV of (sample id, subject, split, domain features, class features)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tag this subject's samples as the target split
    #[arg(long)]
    target_subject: Option<u32>,
    #[arg(long, value_enum, default_value = "single-session")]
    protocol: ProtocolArg,
    #[arg(long)]
    force: bool,
}

/// Entry point for the `pldcp` binary; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Extract(args) => cmd_extract(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Loso(args) => cmd_loso(args),
        Command::NoiseSweep(args) => cmd_noise_sweep(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::ExportEmbeddings(args) => cmd_export(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Default output location: under $PLDCP_OUT_ROOT when set, else the
/// working directory.
fn default_out(name: &str) -> PathBuf {
    match std::env::var_os("PLDCP_OUT_ROOT") {
        Some(root) => PathBuf::from(root).join(name),
        None => PathBuf::from(name),
    }
}

fn guard_overwrite(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Serialize)]
struct RunManifest {
    command_line: Vec<String>,
    artifact_version: String,
    started_unix: u64,
    finished_unix: u64,
    seed: Option<u64>,
    dataset_checksum: Option<String>,
    resolved_config: serde_json::Value,
}

impl RunManifest {
    fn new(started: u64, seed: Option<u64>, checksum: Option<String>, config: serde_json::Value) -> Self {
        RunManifest {
            command_line: std::env::args().collect(),
            artifact_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: started,
            finished_unix: unix_now(),
            seed,
            dataset_checksum: checksum,
            resolved_config: config,
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        experiments::write_text(path, &serde_json::to_string_pretty(self)?)
    }
}

/// Manifest path for commands whose output is a single file:
/// `data.csv` -> `data.run.json` (the dataset sidecar stays `data.json`).
fn file_manifest_path(out: &Path) -> PathBuf {
    out.with_extension("run.json")
}

fn cmd_extract(args: ExtractArgs) -> Result<i32> {
    let started = unix_now();
    let out = args.out.unwrap_or_else(|| default_out("extracted.csv"));
    guard_overwrite(&out, args.force)?;

    let feature_config = FeatureConfig {
        window_seconds: args.window_seconds,
        prefilter: if args.no_prefilter { None } else { FeatureConfig::default().prefilter },
        lds: if args.no_lds { None } else { Some(LdsParams::default()) },
        ..Default::default()
    };

    let mut samples: Vec<Sample> = Vec::new();
    let mut channels = None;
    let mut n_windows = 0usize;
    let mut floored = 0usize;
    for path in &args.recordings {
        let recording = read_recording(path)?;
        match channels {
            None => channels = Some(recording.channels.len()),
            Some(c) if c != recording.channels.len() => {
                return Err(Error::Data(format!(
                    "{} has {} channels but earlier recordings have {c}",
                    path.display(),
                    recording.channels.len()
                )))
            }
            Some(_) => {}
        }
        let (mut extracted, stats) = extract_features(&recording, &feature_config)?;
        n_windows += stats.n_windows;
        floored += stats.floored_windows;
        for mut s in extracted.drain(..) {
            s.id = samples.len() as u64;
            samples.push(s);
        }
    }
    if samples.is_empty() {
        return Err(Error::Data("no samples extracted".into()));
    }

    let channels = channels.unwrap_or(0);
    let n_classes = samples.iter().map(|s| s.label).max().unwrap() as usize + 1;
    let dataset = Dataset {
        manifest: Manifest {
            feature_dim: channels * feature_config.bands.len(),
            n_classes,
            label_names: (0..n_classes).map(|c| format!("label_{c}")).collect(),
            bands: feature_config.bands.clone(),
            channels,
        },
        samples,
    };
    save_dataset(&dataset, &out)?;
    let checksum = dataset_checksum(&out)?;
    RunManifest::new(started, None, Some(checksum), serde_json::to_value(&feature_config)?)
        .write(&file_manifest_path(&out))?;

    println!(
        "extracted {} samples ({} windows, {} floored) from {} recordings -> {}",
        dataset.samples.len(),
        n_windows,
        floored,
        args.recordings.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_synth(args: SynthArgs) -> Result<i32> {
    let started = unix_now();
    let out = args.out.unwrap_or_else(|| default_out("synth.csv"));
    guard_overwrite(&out, args.force)?;

    let config = SynthConfig {
        n_subjects: args.subjects,
        n_sessions: args.sessions,
        n_classes: args.classes,
        samples_per_class: args.samples_per_class,
        latent_dim: args.latent_dim,
        feature_dim: args.feature_dim,
        class_separation: args.class_separation,
        subject_shift: args.subject_shift,
        noise_sigma: args.noise_sigma,
        seed: args.seed,
    };
    let dataset = generate(&config)?;
    save_dataset(&dataset, &out)?;
    let checksum = dataset_checksum(&out)?;
    RunManifest::new(started, Some(args.seed), Some(checksum), serde_json::to_value(&config)?)
        .write(&file_manifest_path(&out))?;

    println!(
        "wrote {} samples ({} subjects x {} sessions x {} classes) -> {}",
        dataset.samples.len(),
        args.subjects,
        args.sessions,
        args.classes,
        out.display()
    );
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let started = unix_now();
    let config = args.train.resolve()?;
    let out = args.out.unwrap_or_else(|| default_out("train_run"));
    guard_overwrite(&out, args.force)?;

    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;
    let refs: Vec<&Sample> = dataset.samples.iter().collect();
    let set = SourceDomainSet::from_samples(&refs, args.domain_key.into(), dataset.manifest.n_classes)?;
    let result = train(&config, &set)?;

    experiments::write_text(&out.join("config.json"), &serde_json::to_string_pretty(&config)?)?;
    write_losses_csv(&out.join("losses.csv"), &result.trace)?;
    write_prototypes_csv(&out.join("prototypes.csv"), &result.store)?;
    let last = result.trace.last().copied();
    Checkpoint::new(&config, result.params, result.store).save(&out.join("checkpoint.json"))?;
    RunManifest::new(started, Some(config.seed), Some(checksum), serde_json::to_value(&config)?)
        .write(&out.join("run_manifest.json"))?;

    if let Some(t) = last {
        println!(
            "trained {} epochs on {} samples ({} domains); final losses: cls {:.4} dom {:.4} pair {:.4} reg {:.4}",
            config.epochs,
            set.len(),
            set.n_domains,
            t.cls_disc,
            t.dom_disc,
            t.pairwise,
            t.reg
        );
    }
    println!("run directory: {}", out.display());
    Ok(0)
}

fn cmd_predict(args: PredictArgs) -> Result<i32> {
    let started = unix_now();
    let out = args.out.unwrap_or_else(|| default_out("predictions.csv"));
    guard_overwrite(&out, args.force)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;
    if dataset.manifest.feature_dim != ckpt.params.dims.feature_dim {
        return Err(Error::shape(
            "predict",
            format!("{} features (checkpoint)", ckpt.params.dims.feature_dim),
            format!("{} (dataset)", dataset.manifest.feature_dim),
        ));
    }

    let n = dataset.samples.len();
    let mut features = crate::matrix::Matrix::zeros(n, dataset.manifest.feature_dim);
    for (r, s) in dataset.samples.iter().enumerate() {
        features.row_mut(r).copy_from_slice(&s.features);
    }
    let use_bilinear = !ckpt.config.ablation.no_bilinear_s;
    let preds = predict(&ckpt.params, &ckpt.store, &features, use_bilinear)?;

    let n_classes = ckpt.store.n_classes();
    let mut text = String::from("sample_id,subject,session,trial,true_label,predicted_label,predicted_domain");
    for c in 0..n_classes {
        text.push_str(&format!(",p_{c}"));
    }
    text.push('\n');
    let mut correct = 0usize;
    for (s, p) in dataset.samples.iter().zip(&preds) {
        if p.label == s.label {
            correct += 1;
        }
        text.push_str(&format!(
            "{},{},{},{},{},{},{}",
            s.id, s.subject, s.session, s.trial, s.label, p.label, p.domain
        ));
        for &prob in &p.probabilities {
            text.push_str(&format!(",{prob}"));
        }
        text.push('\n');
    }
    experiments::write_text(&out, &text)?;
    RunManifest::new(started, Some(ckpt.config.seed), Some(checksum), serde_json::to_value(&ckpt.config)?)
        .write(&file_manifest_path(&out))?;

    println!(
        "predicted {} samples, accuracy {:.2}% -> {}",
        n,
        correct as f64 / n as f64 * 100.0,
        out.display()
    );
    Ok(0)
}

fn write_loso_artifacts(dir: &Path, report: &LosoReport, config: &TrainConfig, checksum: &str) -> Result<()> {
    write_summary_json(&dir.join("summary.json"), report, config, checksum)?;
    write_folds_csv(&dir.join("folds.csv"), report)?;
    for fold in &report.folds {
        if let Some(r) = fold.report() {
            write_confusion_csv(dir, r)?;
        }
    }
    Ok(())
}

fn cmd_loso(args: LosoArgs) -> Result<i32> {
    let started = unix_now();
    let config = args.train.resolve()?;
    let out = args.out.unwrap_or_else(|| default_out("loso_run"));
    guard_overwrite(&out, args.force)?;

    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;
    let protocol: Protocol = args.protocol.into();
    let report = run_loso(&dataset, protocol, &config, args.workers.max(1))?;

    write_loso_artifacts(&out, &report, &config, &checksum)?;
    RunManifest::new(started, Some(config.seed), Some(checksum), serde_json::to_value(&config)?)
        .write(&out.join("run_manifest.json"))?;

    for fold in &report.folds {
        match fold.report() {
            Some(r) => println!(
                "subject {:>3}: {:6.2}% over {} target samples",
                r.target_subject, r.accuracy, r.n_target_samples
            ),
            None => {
                if let experiments::FoldResult::Failed { target_subject, error, .. } = fold {
                    println!("subject {target_subject:>3}: failed ({error})");
                }
            }
        }
    }
    println!(
        "LOSO mean accuracy {} over {}/{} folds -> {}",
        report.formatted(),
        report.n_valid,
        report.folds.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_noise_sweep(args: NoiseSweepArgs) -> Result<i32> {
    let started = unix_now();
    let config = args.train.resolve()?;
    let out = args.out.unwrap_or_else(|| default_out("noise_sweep"));
    guard_overwrite(&out, args.force)?;

    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;
    let strategies: Vec<Strategy> = args.strategies.iter().map(|&s| s.into()).collect();
    let report = run_noise_sweep(
        &dataset,
        args.protocol.into(),
        &args.ratios,
        &strategies,
        &config,
        args.workers.max(1),
    )?;

    let mut cells_csv = String::from("eta,strategy,mean_accuracy,std_accuracy,n_valid,formatted\n");
    for cell in &report.cells {
        cells_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            cell.eta,
            cell.strategy.name(),
            cell.loso.mean_accuracy,
            cell.loso.std_accuracy,
            cell.loso.n_valid,
            cell.loso.formatted()
        ));
    }
    experiments::write_text(&out.join("cells.csv"), &cells_csv)?;
    experiments::write_text(&out.join("sweep.json"), &serde_json::to_string_pretty(&report)?)?;
    RunManifest::new(started, Some(config.seed), Some(checksum), serde_json::to_value(&config)?)
        .write(&out.join("run_manifest.json"))?;

    for cell in &report.cells {
        println!(
            "eta {:>4.0}%  {:<9}  {}",
            cell.eta * 100.0,
            cell.strategy.name(),
            cell.loso.formatted()
        );
    }
    println!("noise sweep -> {}", out.display());
    Ok(0)
}

fn single_flag_rows() -> Vec<AblationFlags> {
    vec![
        AblationFlags { no_domain_prototype: true, ..Default::default() },
        AblationFlags { no_dom_disc: true, ..Default::default() },
        AblationFlags { no_cls_disc: true, ..Default::default() },
        AblationFlags { no_pairwise: true, ..Default::default() },
        AblationFlags { no_bilinear_s: true, ..Default::default() },
        AblationFlags { no_soft_reg: true, ..Default::default() },
    ]
}

fn cmd_ablate(args: AblateArgs) -> Result<i32> {
    let started = unix_now();
    let config = args.train.resolve()?;
    let out = args.out.unwrap_or_else(|| default_out("ablation"));
    guard_overwrite(&out, args.force)?;

    let rows: Vec<AblationFlags> = match &args.flags {
        None => single_flag_rows(),
        Some(spec) => spec
            .split(',')
            .map(|row| parse_ablation(row.trim()))
            .collect::<Result<_>>()?,
    };
    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;
    let report = run_ablation(&dataset, args.protocol.into(), &rows, &config, args.workers.max(1))?;

    let mut rows_csv = String::from("name,mean_accuracy,std_accuracy,n_valid,formatted\n");
    for row in &report.rows {
        rows_csv.push_str(&format!(
            "{},{},{},{},{}\n",
            row.name,
            row.loso.mean_accuracy,
            row.loso.std_accuracy,
            row.loso.n_valid,
            row.loso.formatted()
        ));
    }
    experiments::write_text(&out.join("rows.csv"), &rows_csv)?;
    experiments::write_text(&out.join("ablation.json"), &serde_json::to_string_pretty(&report)?)?;
    RunManifest::new(started, Some(config.seed), Some(checksum), serde_json::to_value(&config)?)
        .write(&out.join("run_manifest.json"))?;

    for row in &report.rows {
        println!("{:<24} {}", row.name, row.loso.formatted());
    }
    println!("ablation table -> {}", out.display());
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    if !(args.eps.is_finite() && args.eps > 0.0) {
        return Err(Error::Config(format!("eps must be positive, got {}", args.eps)));
    }
    let scenario = check_scenario(args.seed, args.batch)?;
    let report = fd_check(&scenario, args.eps)?;
    println!(
        "max relative error {:.3e} over {} entries (worst: parameter {}, entry ({}, {}))",
        report.max_rel_err, report.n_entries, report.worst.0, report.worst.1, report.worst.2
    );
    if report.max_rel_err < GRADCHECK_TOLERANCE {
        println!("PASS (tolerance {GRADCHECK_TOLERANCE:.0e})");
        Ok(0)
    } else {
        println!(
            "FAIL (tolerance {GRADCHECK_TOLERANCE:.0e}); note: seeds whose batch has near-parallel \
             class-probability pairs are ill-conditioned for finite differences"
        );
        Ok(1)
    }
}

fn cmd_export(args: ExportArgs) -> Result<i32> {
    let started = unix_now();
    let out = args.out.unwrap_or_else(|| default_out("embeddings.csv"));
    guard_overwrite(&out, args.force)?;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    let checksum = dataset_checksum(&args.dataset)?;

    let fold = match args.target_subject {
        None => None,
        Some(subject) => {
            let folds = loso_splits(&dataset, args.protocol.into())?;
            Some(
                folds
                    .into_iter()
                    .find(|f| f.target_subject == subject)
                    .ok_or_else(|| {
                        Error::Data(format!("no subject {subject} in the dataset"))
                    })?,
            )
        }
    };
    write_embeddings_csv(&out, &ckpt.params, &dataset, fold.as_ref())?;
    RunManifest::new(started, Some(ckpt.config.seed), Some(checksum), serde_json::to_value(&ckpt.config)?)
        .write(&file_manifest_path(&out))?;

    println!("wrote embeddings for {} samples -> {}", dataset.samples.len(), out.display());
    Ok(0)
}
