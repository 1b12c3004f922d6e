//! Protocol-level harness: leave-one-subject-out evaluation, label-noise
//! sweeps, ablation sweeps, confusion matrices, and the report files sweeps
//! emit (summary.json, folds.csv, confusion/embedding/loss CSVs).
//!
//! Every fold trains on source subjects only and predicts the held-out
//! subject; a provenance check makes target leakage a hard error rather than
//! a silent bug. Fold seeds are `config.seed + fold_index`, so rows of a
//! sweep that share a base seed are paired fold-for-fold.

use std::collections::{HashMap, HashSet};
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    inject_label_noise, loso_splits, Dataset, DomainKey, FoldSpec, NoiseReport, Protocol, Sample,
    SourceDomainSet,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::network::ModelParams;
use crate::prototypes::{forward_in_chunks, predict};
use crate::trainer::{ablation_apply, train, AblationFlags, EpochTrace, TrainConfig};

/// One evaluated fold: the held-out subject, its accuracy, and the confusion
/// counts (rows = true label, columns = predicted).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldReport {
    pub target_subject: u32,
    pub seed: u64,
    /// Percent correct over the target samples.
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
    pub n_target_samples: usize,
    pub fingerprint: String,
}

/// A fold either evaluates or records why it could not; one bad fold never
/// aborts a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum FoldResult {
    Ok { report: FoldReport },
    Failed { target_subject: u32, seed: u64, error: String },
}

impl FoldResult {
    pub fn report(&self) -> Option<&FoldReport> {
        match self {
            FoldResult::Ok { report } => Some(report),
            FoldResult::Failed { .. } => None,
        }
    }

    pub fn target_subject(&self) -> u32 {
        match self {
            FoldResult::Ok { report } => report.target_subject,
            FoldResult::Failed { target_subject, .. } => *target_subject,
        }
    }
}

/// One full leave-one-subject-out pass: per-fold results plus the
/// mean ± population-std summary over the folds that evaluated.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LosoReport {
    pub protocol: Protocol,
    pub folds: Vec<FoldResult>,
    pub mean_accuracy: f64,
    /// Population standard deviation (divide by N, not N-1).
    pub std_accuracy: f64,
    pub n_valid: usize,
}

impl LosoReport {
    /// The conventional report string, e.g. `82.88±05.23`.
    pub fn formatted(&self) -> String {
        format_mean_std(self.mean_accuracy, self.std_accuracy)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.folds.iter().filter_map(|f| f.report().map(|r| r.accuracy)).collect()
    }
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:05.2}")
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Confusion counts from parallel truth/prediction slices.
pub fn confusion(truths: &[u32], preds: &[u32], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if truths.len() != preds.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} predictions", truths.len()),
            format!("{}", preds.len()),
        ));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truths.iter().zip(preds) {
        if t as usize >= n_classes || p as usize >= n_classes {
            return Err(Error::Data(format!(
                "label out of range in confusion matrix: true {t}, predicted {p}, {n_classes} classes"
            )));
        }
        m[t as usize][p as usize] += 1;
    }
    Ok(m)
}

/// Row-normalized percentage view; all-zero rows stay zero.
pub fn confusion_percentages(counts: &[Vec<u64>]) -> Vec<Vec<f64>> {
    counts
        .iter()
        .map(|row| {
            let total: u64 = row.iter().sum();
            if total == 0 {
                vec![0.0; row.len()]
            } else {
                row.iter().map(|&c| c as f64 / total as f64 * 100.0).collect()
            }
        })
        .collect()
}

pub fn accuracy_from_confusion(counts: &[Vec<u64>]) -> f64 {
    let total: u64 = counts.iter().map(|r| r.iter().sum::<u64>()).sum();
    let diag: u64 = counts.iter().enumerate().map(|(i, r)| r[i]).sum();
    if total == 0 {
        0.0
    } else {
        diag as f64 / total as f64 * 100.0
    }
}

/// Domains are subjects under the single-session protocol and
/// subject–session pairs when folds span sessions.
pub fn domain_key(protocol: Protocol) -> DomainKey {
    match protocol {
        Protocol::SingleSession => DomainKey::Subject,
        Protocol::CrossSession => DomainKey::SubjectSession,
    }
}

/// Train on the fold's source samples only and evaluate every target sample.
/// Errors if the trained model's provenance record intersects the target ids.
pub fn run_fold(
    dataset: &Dataset,
    fold: &FoldSpec,
    protocol: Protocol,
    config: &TrainConfig,
) -> Result<FoldReport> {
    let source: Vec<&Sample> = fold
        .source_ids
        .iter()
        .map(|&id| {
            dataset
                .by_id(id)
                .ok_or_else(|| Error::Data(format!("fold references unknown sample id {id}")))
        })
        .collect::<Result<_>>()?;
    let set = SourceDomainSet::from_samples(&source, domain_key(protocol), dataset.manifest.n_classes)?;
    let out = train(config, &set)?;

    let leaked = out.provenance.intersection(&fold.target_ids);
    if !leaked.is_empty() {
        return Err(Error::Data(format!(
            "target leakage: {} target sample ids (first: {}) were consumed during training \
             of the fold holding out subject {}",
            leaked.len(),
            leaked[0],
            fold.target_subject
        )));
    }

    let mut features = Matrix::zeros(fold.target_ids.len(), dataset.manifest.feature_dim);
    let mut truths = Vec::with_capacity(fold.target_ids.len());
    for (r, &id) in fold.target_ids.iter().enumerate() {
        let s = dataset
            .by_id(id)
            .ok_or_else(|| Error::Data(format!("fold references unknown sample id {id}")))?;
        features.row_mut(r).copy_from_slice(&s.features);
        truths.push(s.label);
    }
    let preds = predict(&out.params, &out.store, &features, out.wiring.use_bilinear)?;
    let predicted: Vec<u32> = preds.iter().map(|p| p.label).collect();
    let counts = confusion(&truths, &predicted, dataset.manifest.n_classes)?;

    Ok(FoldReport {
        target_subject: fold.target_subject,
        seed: config.seed,
        accuracy: accuracy_from_confusion(&counts),
        confusion: counts,
        n_target_samples: fold.target_ids.len(),
        fingerprint: config.fingerprint(),
    })
}

/// Run one closure per fold, optionally across worker threads, preserving
/// fold order in the output. Each fold is fully isolated, so parallel runs
/// produce byte-identical reports.
fn run_folds<F>(folds: &[FoldSpec], base_seed: u64, workers: usize, run: F) -> Vec<FoldResult>
where
    F: Fn(usize, &FoldSpec) -> Result<FoldReport> + Sync,
{
    let wrap = |i: usize, fold: &FoldSpec| match run(i, fold) {
        Ok(report) => FoldResult::Ok { report },
        Err(e) => FoldResult::Failed {
            target_subject: fold.target_subject,
            seed: base_seed + i as u64,
            error: e.to_string(),
        },
    };
    if workers <= 1 || folds.len() <= 1 {
        return folds.iter().enumerate().map(|(i, f)| wrap(i, f)).collect();
    }
    let workers = workers.min(folds.len());
    let mut slots: Vec<Option<FoldResult>> = vec![None; folds.len()];
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let wrap = &wrap;
            handles.push(scope.spawn(move || {
                let mut mine = Vec::new();
                let mut i = w;
                while i < folds.len() {
                    mine.push((i, wrap(i, &folds[i])));
                    i += workers;
                }
                mine
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("fold worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("every fold slot filled")).collect()
}

fn summarize(protocol: Protocol, folds: Vec<FoldResult>) -> Result<LosoReport> {
    let accs: Vec<f64> = folds.iter().filter_map(|f| f.report().map(|r| r.accuracy)).collect();
    if accs.is_empty() {
        let first = folds
            .iter()
            .find_map(|f| match f {
                FoldResult::Failed { error, .. } => Some(error.clone()),
                FoldResult::Ok { .. } => None,
            })
            .unwrap_or_else(|| "no folds".into());
        return Err(Error::Data(format!("every fold failed; first error: {first}")));
    }
    let (mean, std) = mean_and_std(&accs);
    Ok(LosoReport {
        protocol,
        n_valid: accs.len(),
        folds,
        mean_accuracy: mean,
        std_accuracy: std,
    })
}

/// Leave-one-subject-out evaluation over every subject in the dataset.
pub fn run_loso(
    dataset: &Dataset,
    protocol: Protocol,
    config: &TrainConfig,
    workers: usize,
) -> Result<LosoReport> {
    config.validate()?;
    let folds = loso_splits(dataset, protocol)?;
    let results = run_folds(&folds, config.seed, workers, |i, fold| {
        let mut cfg = config.clone();
        cfg.seed = config.seed + i as u64;
        run_fold(dataset, fold, protocol, &cfg)
    });
    summarize(protocol, results)
}

/// Copy of the dataset with labels of `eta * |source|` source samples
/// flipped; target samples keep their labels (they are evaluation ground
/// truth, never training input).
pub fn corrupt_fold_sources(
    dataset: &Dataset,
    fold: &FoldSpec,
    eta: f64,
    seed: u64,
) -> Result<(Dataset, NoiseReport)> {
    let source: HashSet<u64> = fold.source_ids.iter().copied().collect();
    let mut corrupted = dataset.clone();
    let mut source_samples: Vec<Sample> = corrupted
        .samples
        .iter()
        .filter(|s| source.contains(&s.id))
        .cloned()
        .collect();
    let report = inject_label_noise(&mut source_samples, eta, dataset.manifest.n_classes, seed)?;
    let new_labels: HashMap<u64, u32> = source_samples.iter().map(|s| (s.id, s.label)).collect();
    for s in &mut corrupted.samples {
        if let Some(&label) = new_labels.get(&s.id) {
            s.label = label;
        }
    }
    Ok((corrupted, report))
}

/// Which classification loss a noise-sweep cell trains with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Pairwise,
    Pointwise,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Pairwise => "pairwise",
            Strategy::Pointwise => "pointwise",
        }
    }
}

/// One (noise ratio, strategy) cell of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseCell {
    pub eta: f64,
    pub strategy: Strategy,
    pub loso: LosoReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSweepReport {
    pub cells: Vec<NoiseCell>,
}

impl NoiseSweepReport {
    pub fn cell(&self, eta: f64, strategy: Strategy) -> Option<&NoiseCell> {
        self.cells.iter().find(|c| c.eta == eta && c.strategy == strategy)
    }
}

/// For each ratio and strategy: corrupt every fold's source labels (only),
/// run the full LOSO protocol, and record the summary. The same fold and
/// noise seeds are used in every cell, so cells are directly comparable.
pub fn run_noise_sweep(
    dataset: &Dataset,
    protocol: Protocol,
    ratios: &[f64],
    strategies: &[Strategy],
    config: &TrainConfig,
    workers: usize,
) -> Result<NoiseSweepReport> {
    config.validate()?;
    if ratios.is_empty() || strategies.is_empty() {
        return Err(Error::Config("noise sweep needs at least one ratio and one strategy".into()));
    }
    for &eta in ratios {
        if !(0.0..1.0).contains(&eta) {
            return Err(Error::Config(format!("noise ratio must be in [0, 1), got {eta}")));
        }
    }
    let folds = loso_splits(dataset, protocol)?;
    let mut cells = Vec::with_capacity(ratios.len() * strategies.len());
    for &eta in ratios {
        for &strategy in strategies {
            let mut cell_cfg = config.clone();
            cell_cfg.ablation.no_pairwise = strategy == Strategy::Pointwise;
            let results = run_folds(&folds, config.seed, workers, |i, fold| {
                let mut cfg = cell_cfg.clone();
                cfg.seed = config.seed + i as u64;
                let (corrupted, _) = corrupt_fold_sources(dataset, fold, eta, cfg.seed)?;
                run_fold(&corrupted, fold, protocol, &cfg)
            });
            cells.push(NoiseCell {
                eta,
                strategy,
                loso: summarize(protocol, results)?,
            });
        }
    }
    Ok(NoiseSweepReport { cells })
}

/// One row of an ablation table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub flags: AblationFlags,
    pub loso: LosoReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

pub fn ablation_name(flags: &AblationFlags) -> String {
    let mut parts = Vec::new();
    if flags.no_domain_prototype {
        parts.push("no_domain_prototype");
    }
    if flags.no_dom_disc {
        parts.push("no_dom_disc");
    }
    if flags.no_cls_disc {
        parts.push("no_cls_disc");
    }
    if flags.no_pairwise {
        parts.push("no_pairwise");
    }
    if flags.no_bilinear_s {
        parts.push("no_bilinear_s");
    }
    if flags.no_soft_reg {
        parts.push("no_soft_reg");
    }
    if parts.is_empty() {
        "full".to_string()
    } else {
        parts.join("+")
    }
}

/// The full model plus one LOSO row per flag set, all with the same base
/// seed so rows are paired fold-for-fold.
pub fn run_ablation(
    dataset: &Dataset,
    protocol: Protocol,
    flags_list: &[AblationFlags],
    config: &TrainConfig,
    workers: usize,
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(flags_list.len() + 1);
    let mut full_cfg = config.clone();
    full_cfg.ablation = AblationFlags::default();
    for (name, cfg) in std::iter::once(("full".to_string(), full_cfg)).chain(
        flags_list.iter().map(|&flags| {
            let mut cfg = config.clone();
            cfg.ablation = flags;
            (ablation_name(&flags), cfg)
        }),
    ) {
        ablation_apply(&cfg)?;
        rows.push(AblationRow {
            name,
            flags: cfg.ablation,
            loso: run_loso(dataset, protocol, &cfg, workers)?,
        });
    }
    Ok(AblationReport { rows })
}

pub(crate) fn write_text(path: &Path, content: &str) -> Result<()> {
    let ctx = || format!("writing {}", path.display());
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(ctx(), e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
    f.write_all(content.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
    f.sync_all().map_err(|e| Error::io(ctx(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))?;
    Ok(())
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    formatted: String,
    mean_accuracy: f64,
    std_accuracy: f64,
    n_folds: usize,
    n_valid: usize,
    protocol: Protocol,
    fingerprint: String,
    dataset_checksum: String,
    config: &'a TrainConfig,
}

/// summary.json: the headline numbers plus everything needed to tie the run
/// to its exact config and dataset.
pub fn write_summary_json(
    path: &Path,
    report: &LosoReport,
    config: &TrainConfig,
    dataset_checksum: &str,
) -> Result<()> {
    let file = SummaryFile {
        formatted: report.formatted(),
        mean_accuracy: report.mean_accuracy,
        std_accuracy: report.std_accuracy,
        n_folds: report.folds.len(),
        n_valid: report.n_valid,
        protocol: report.protocol,
        fingerprint: config.fingerprint(),
        dataset_checksum: dataset_checksum.to_string(),
        config,
    };
    write_text(path, &serde_json::to_string_pretty(&file)?)
}

/// folds.csv: one row per fold, '.' decimal, no locale formatting.
pub fn write_folds_csv(path: &Path, report: &LosoReport) -> Result<()> {
    let mut out = String::from("target_subject,seed,n_target_samples,accuracy,status,error\n");
    for fold in &report.folds {
        match fold {
            FoldResult::Ok { report: r } => {
                out.push_str(&format!(
                    "{},{},{},{},ok,\n",
                    r.target_subject, r.seed, r.n_target_samples, r.accuracy
                ));
            }
            FoldResult::Failed { target_subject, seed, error } => {
                let clean: String = error
                    .chars()
                    .map(|c| if c == ',' || c == '\n' { ';' } else { c })
                    .collect();
                out.push_str(&format!("{target_subject},{seed},,,failed,{clean}\n"));
            }
        }
    }
    write_text(path, &out)
}

/// confusion_{subject}.csv: count matrix, rows = true label.
pub fn write_confusion_csv(dir: &Path, report: &FoldReport) -> Result<()> {
    let n = report.confusion.len();
    let mut out = String::from("true_label");
    for p in 0..n {
        out.push_str(&format!(",pred_{p}"));
    }
    out.push('\n');
    for (t, row) in report.confusion.iter().enumerate() {
        out.push_str(&t.to_string());
        for &c in row {
            out.push_str(&format!(",{c}"));
        }
        out.push('\n');
    }
    write_text(&dir.join(format!("confusion_{}.csv", report.target_subject)), &out)
}

/// losses.csv: the per-epoch loss trace of one training run.
pub fn write_losses_csv(path: &Path, trace: &[EpochTrace]) -> Result<()> {
    let mut out =
        String::from("epoch,grl_lambda,cls_disc,dom_disc,pairwise,reg,total,skipped_batches\n");
    for t in trace {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            t.epoch, t.grl_lambda, t.cls_disc, t.dom_disc, t.pairwise, t.reg, t.total, t.skipped_batches
        ));
    }
    write_text(path, &out)
}

/// prototypes.csv: domain rows then the present class rows.
pub fn write_prototypes_csv(path: &Path, store: &crate::prototypes::PrototypeStore) -> Result<()> {
    let h = store.domain_protos.cols();
    let mut out = String::from("kind,domain,class");
    for k in 0..h {
        out.push_str(&format!(",v{k}"));
    }
    out.push('\n');
    for d in 0..store.n_domains() {
        out.push_str(&format!("domain,{d},"));
        for k in 0..h {
            out.push_str(&format!(",{}", store.domain_protos.at(d, k)));
        }
        out.push('\n');
    }
    for d in 0..store.n_domains() {
        for c in 0..store.n_classes() {
            if !store.present[d][c] {
                continue;
            }
            out.push_str(&format!("class,{d},{c}"));
            for k in 0..h {
                out.push_str(&format!(",{}", store.class_protos[d].at(c, k)));
            }
            out.push('\n');
        }
    }
    write_text(path, &out)
}

/// embeddings.csv: per sample — id, subject, split tag, then the domain
/// features and class features from the given weights. `fold` marks each
/// sample source or target; without one every sample is tagged `all`.
pub fn write_embeddings_csv(
    path: &Path,
    params: &ModelParams,
    dataset: &Dataset,
    fold: Option<&FoldSpec>,
) -> Result<()> {
    let n = dataset.samples.len();
    if n == 0 {
        return Err(Error::Data("cannot export embeddings of an empty dataset".into()));
    }
    let mut features = Matrix::zeros(n, dataset.manifest.feature_dim);
    for (r, s) in dataset.samples.iter().enumerate() {
        features.row_mut(r).copy_from_slice(&s.features);
    }
    let (xc, xd) = forward_in_chunks(params, &features)?;
    let target: HashSet<u64> = fold.map(|f| f.target_ids.iter().copied().collect()).unwrap_or_default();

    let h = xd.cols();
    let mut out = String::from("sample_id,domain,split");
    for k in 0..h {
        out.push_str(&format!(",xd_{k}"));
    }
    for k in 0..h {
        out.push_str(&format!(",xc_{k}"));
    }
    out.push('\n');
    for (r, s) in dataset.samples.iter().enumerate() {
        let split = if fold.is_none() {
            "all"
        } else if target.contains(&s.id) {
            "target"
        } else {
            "source"
        };
        out.push_str(&format!("{},{},{split}", s.id, s.subject));
        for &v in xd.row(r) {
            out.push_str(&format!(",{v}"));
        }
        for &v in xc.row(r) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}
