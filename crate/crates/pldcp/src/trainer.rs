//! The training loop: epoch-level prototype refresh, shuffled mini-batches,
//! reverse-mode gradients, Adam or SGD updates, and JSON checkpoints with a
//! config fingerprint. A provenance counter records every sample id that
//! influences a weight update or a prototype, so evaluation harnesses can
//! prove the target domain was never touched.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::SourceDomainSet;
use crate::error::{Error, Result};
use crate::graph::ValueGraph;
use crate::matrix::Matrix;
use crate::network::{ModelDims, ModelParams};
use crate::objectives::{Batch, ClassLossKind, LossBreakdown, LossWeights, ObjectiveSpec};
use crate::prototypes::{PrototypeStore, StoreNodes};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Strength schedule for the gradient-reversal layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GrlSchedule {
    Fixed { lambda: f64 },
    /// 2/(1+exp(-10 p)) - 1 over training progress p in [0,1].
    DannWarmup,
}

impl Default for GrlSchedule {
    fn default() -> Self {
        GrlSchedule::Fixed { lambda: 1.0 }
    }
}

impl GrlSchedule {
    pub fn lambda_at(&self, progress: f64) -> f64 {
        match self {
            GrlSchedule::Fixed { lambda } => *lambda,
            GrlSchedule::DannWarmup => 2.0 / (1.0 + (-10.0 * progress).exp()) - 1.0,
        }
    }
}

/// Which pieces of the full model to disable, mirroring the single-component
/// ablations reported for this architecture.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Pool every source domain into one pseudo-domain for the store.
    pub no_domain_prototype: bool,
    /// Drop the domain-discriminator loss term.
    pub no_dom_disc: bool,
    /// Drop the class-discriminator loss term.
    pub no_cls_disc: bool,
    /// Replace the pairwise loss with per-sample BCE against one-hot labels.
    pub no_pairwise: bool,
    /// Score domains by plain dot product instead of the bilinear form.
    pub no_bilinear_s: bool,
    /// Drop the prototype orthogonality regularizer.
    pub no_soft_reg: bool,
}

impl AblationFlags {
    pub fn any(&self) -> bool {
        self.no_domain_prototype
            || self.no_dom_disc
            || self.no_cls_disc
            || self.no_pairwise
            || self.no_bilinear_s
            || self.no_soft_reg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weights: LossWeights,
    pub grl: GrlSchedule,
    pub seed: u64,
    pub hidden_shallow: usize,
    pub hidden: usize,
    pub ablation: AblationFlags,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 96,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::default(),
            weights: LossWeights::default(),
            grl: GrlSchedule::default(),
            seed: 0,
            hidden_shallow: 128,
            hidden: 64,
            ablation: AblationFlags::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 (the pairwise loss needs pairs)".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.hidden_shallow == 0 || self.hidden == 0 {
            return Err(Error::Config("hidden layer widths must be nonzero".into()));
        }
        ablation_apply(self).map(|_| ())
    }

    /// Hex SHA-256 of the canonical JSON encoding; stored in checkpoints and
    /// reports so artifacts can be matched to the exact configuration.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        let digest = hasher.finalize();
        let mut out = String::with_capacity(64);
        for b in digest {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }
}

/// The effective objective wiring after applying ablation flags.
#[derive(Clone, Copy, Debug)]
pub struct EffectiveWiring {
    pub weights: LossWeights,
    pub class_loss: ClassLossKind,
    pub use_bilinear: bool,
    /// Build the store over a single pooled pseudo-domain.
    pub pool_domains: bool,
}

/// Translate ablation flags into objective wiring. Disabling both the domain
/// prototypes and the bilinear form is rejected: with a single pooled
/// pseudo-domain there is no domain scoring left for the bilinear switch to
/// act on, so the combination requests an experiment that does not exist.
pub fn ablation_apply(config: &TrainConfig) -> Result<EffectiveWiring> {
    let f = config.ablation;
    if f.no_domain_prototype && f.no_bilinear_s {
        return Err(Error::Config(
            "contradictory ablation: no_domain_prototype pools all domains, leaving no \
             domain scoring for no_bilinear_s to modify"
                .into(),
        ));
    }
    let mut weights = config.weights;
    if f.no_dom_disc {
        weights.dom = 0.0;
    }
    if f.no_cls_disc {
        weights.cls = 0.0;
    }
    if f.no_soft_reg {
        weights.beta = 0.0;
    }
    Ok(EffectiveWiring {
        weights,
        class_loss: if f.no_pairwise {
            ClassLossKind::Pointwise
        } else {
            ClassLossKind::Pairwise
        },
        use_bilinear: !f.no_bilinear_s,
        pool_domains: f.no_domain_prototype,
    })
}

/// Counts how many times each sample id was consumed by training (batch
/// gradients and prototype refreshes both count).
#[derive(Clone, Debug, Default)]
pub struct ProvenanceCounter {
    counts: BTreeMap<u64, u64>,
}

impl ProvenanceCounter {
    pub fn record(&mut self, ids: &[u64]) {
        for &id in ids {
            *self.counts.entry(id).or_insert(0) += 1;
        }
    }

    pub fn consumed(&self, id: u64) -> u64 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.counts.keys().copied()
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Ids from `candidates` that were consumed at least once.
    pub fn intersection(&self, candidates: &[u64]) -> Vec<u64> {
        candidates
            .iter()
            .copied()
            .filter(|id| self.counts.contains_key(id))
            .collect()
    }
}

/// Per-epoch mean loss values plus bookkeeping.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub grl_lambda: f64,
    pub cls_disc: f64,
    pub dom_disc: f64,
    pub pairwise: f64,
    pub reg: f64,
    pub total: f64,
    pub skipped_batches: usize,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub store: PrototypeStore,
    pub trace: Vec<EpochTrace>,
    pub provenance: ProvenanceCounter,
    pub wiring: EffectiveWiring,
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Optimizer {
    fn new(kind: OptimizerKind, lr: f64, shapes: &[(usize, usize)]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        Optimizer {
            kind,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn apply(&mut self, params: &mut [&mut Matrix], grads: &[Matrix]) {
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (w, &gw) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= self.lr * gw;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(self.step as i32);
                let bc2 = 1.0 - beta2.powi(self.step as i32);
                for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                    let m = self.m[i].data_mut();
                    let v = self.v[i].data_mut();
                    for ((w, &gw), (mi, vi)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut().zip(v.iter_mut()))
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * gw;
                        *vi = beta2 * *vi + (1.0 - beta2) * gw * gw;
                        let m_hat = *mi / bc1;
                        let v_hat = *vi / bc2;
                        *w -= self.lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn refresh_store(
    params: &ModelParams,
    set: &SourceDomainSet,
    pool: bool,
    provenance: &mut ProvenanceCounter,
) -> Result<PrototypeStore> {
    provenance.record(&set.sample_ids);
    if pool {
        let pooled_ids = vec![0usize; set.len()];
        let names = vec!["pooled sources".to_string()];
        PrototypeStore::compute(
            params,
            &set.features,
            &pooled_ids,
            &set.labels,
            1,
            set.n_classes,
            &names,
        )
    } else {
        PrototypeStore::compute(
            params,
            &set.features,
            &set.domain_ids,
            &set.labels,
            set.n_domains,
            set.n_classes,
            &set.domain_names,
        )
    }
}

/// Train on the source set. Deterministic given the config seed: weights are
/// initialized from it and the per-epoch shuffle stream continues from the
/// same generator.
pub fn train(config: &TrainConfig, set: &SourceDomainSet) -> Result<TrainOutput> {
    config.validate()?;
    if set.n_domains < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 source domains, got {}",
            set.n_domains
        )));
    }
    if set.n_classes < 2 {
        return Err(Error::Config(format!(
            "training needs at least 2 classes, got {}",
            set.n_classes
        )));
    }
    let wiring = ablation_apply(config)?;

    let dims = ModelDims {
        feature_dim: set.features.cols(),
        hidden_shallow: config.hidden_shallow,
        hidden: config.hidden,
        n_classes: set.n_classes,
        n_domains: set.n_domains,
    };
    let mut params = ModelParams::init(dims, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let shapes: Vec<(usize, usize)> = params.param_list().iter().map(|m| m.dims()).collect();
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate, &shapes);

    let mut provenance = ProvenanceCounter::default();
    let mut trace = Vec::with_capacity(config.epochs);
    let mut indices: Vec<usize> = (0..set.len()).collect();

    for epoch in 0..config.epochs {
        let progress = if config.epochs > 1 {
            epoch as f64 / (config.epochs - 1) as f64
        } else {
            1.0
        };
        let lambda = config.grl.lambda_at(progress);
        let store = refresh_store(&params, set, wiring.pool_domains, &mut provenance)?;

        indices.shuffle(&mut rng);
        let mut sums = LossBreakdown {
            cls_disc: 0.0,
            dom_disc: 0.0,
            pairwise: 0.0,
            reg: 0.0,
            total: 0.0,
            weights: wiring.weights,
        };
        let mut n_batches = 0usize;
        let mut skipped = 0usize;

        for chunk in indices.chunks(config.batch_size) {
            if chunk.len() < 2 {
                skipped += 1;
                continue;
            }
            let mut features = Matrix::zeros(chunk.len(), set.features.cols());
            let mut labels = Vec::with_capacity(chunk.len());
            let mut domains = Vec::with_capacity(chunk.len());
            let mut ids = Vec::with_capacity(chunk.len());
            for (r, &i) in chunk.iter().enumerate() {
                features.row_mut(r).copy_from_slice(set.features.row(i));
                labels.push(set.labels[i]);
                domains.push(set.domain_ids[i]);
                ids.push(set.sample_ids[i]);
            }

            let spec = ObjectiveSpec {
                weights: wiring.weights,
                class_loss: wiring.class_loss,
                use_bilinear: wiring.use_bilinear,
                grl_lambda: lambda,
                include_adversarial: true,
            };
            let mut g = ValueGraph::new();
            let nodes = params.register(&mut g)?;
            let store_nodes = StoreNodes::register(&mut g, &store)?;
            let batch = Batch {
                features: &features,
                labels: &labels,
                domains: &domains,
                n_domains: set.n_domains,
            };
            let (breakdown, root) =
                crate::objectives::total_objective(&mut g, &nodes, &store, &store_nodes, batch, &spec)
                    .map_err(|e| {
                        Error::Numeric(format!("epoch {epoch}, batch of {}: {e}", chunk.len()))
                    })?;
            let grads = g.backward(root)?;

            let grad_mats: Vec<Matrix> = nodes
                .ids()
                .iter()
                .zip(&shapes)
                .map(|(&id, &(r, c))| grads.get_or_zeros(id, r, c))
                .collect();
            let mut plist = params.param_list_mut();
            optimizer.apply(&mut plist, &grad_mats);
            provenance.record(&ids);

            sums.cls_disc += breakdown.cls_disc;
            sums.dom_disc += breakdown.dom_disc;
            sums.pairwise += breakdown.pairwise;
            sums.reg += breakdown.reg;
            sums.total += breakdown.total;
            n_batches += 1;
        }

        let denom = n_batches.max(1) as f64;
        trace.push(EpochTrace {
            epoch,
            grl_lambda: lambda,
            cls_disc: sums.cls_disc / denom,
            dom_disc: sums.dom_disc / denom,
            pairwise: sums.pairwise / denom,
            reg: sums.reg / denom,
            total: sums.total / denom,
            skipped_batches: skipped,
        });
    }

    // Final store from the final weights; frozen for the testing phase.
    let store = refresh_store(&params, set, wiring.pool_domains, &mut provenance)?;
    Ok(TrainOutput {
        params,
        store,
        trace,
        provenance,
        wiring,
    })
}

/// Serialized training artifact: weights, frozen store, and the config with
/// its fingerprint.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fingerprint: String,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub store: PrototypeStore,
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, params: ModelParams, store: PrototypeStore) -> Self {
        Checkpoint {
            fingerprint: config.fingerprint(),
            config: config.clone(),
            params,
            store,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        let tmp = path.with_extension("tmp");
        let ctx = || format!("writing checkpoint {}", path.display());
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(ctx(), e))?;
        f.write_all(json.as_bytes()).map_err(|e| Error::io(ctx(), e))?;
        f.sync_all().map_err(|e| Error::io(ctx(), e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(ctx(), e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        let recomputed = ckpt.config.fingerprint();
        if ckpt.fingerprint != recomputed {
            return Err(Error::Fingerprint {
                checkpoint: ckpt.fingerprint,
                requested: recomputed,
            });
        }
        Ok(ckpt)
    }

    /// Load and insist the checkpoint was produced by `expected`.
    pub fn load_matching(path: &Path, expected: &TrainConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        let want = expected.fingerprint();
        if ckpt.fingerprint != want {
            return Err(Error::Fingerprint {
                checkpoint: ckpt.fingerprint,
                requested: want,
            });
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DomainKey, Sample, SourceDomainSet, SynthConfig};
    use crate::prototypes::predict;

    fn tiny_synth(seed: u64) -> crate::dataset::Dataset {
        crate::dataset::generate(&SynthConfig {
            n_subjects: 4,
            n_sessions: 1,
            n_classes: 3,
            samples_per_class: 8,
            latent_dim: 8,
            feature_dim: 20,
            class_separation: 10.0,
            subject_shift: 2.0,
            noise_sigma: 0.5,
            seed,
        })
        .unwrap()
    }

    fn source_set(data: &crate::dataset::Dataset) -> SourceDomainSet {
        let refs: Vec<&Sample> = data.samples.iter().collect();
        SourceDomainSet::from_samples(&refs, DomainKey::Subject, data.manifest.n_classes).unwrap()
    }

    fn quick_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 16,
            hidden_shallow: 12,
            hidden: 8,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epochs_and_tiny_batches_are_rejected() {
        let mut c = quick_config();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = quick_config();
        c.batch_size = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn contradictory_ablation_flags_error() {
        let mut c = quick_config();
        c.ablation.no_domain_prototype = true;
        c.ablation.no_bilinear_s = true;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("contradictory"), "{err}");
    }

    #[test]
    fn ablation_wiring_matches_flags() {
        let mut c = quick_config();
        c.ablation.no_dom_disc = true;
        c.ablation.no_soft_reg = true;
        c.ablation.no_pairwise = true;
        let w = ablation_apply(&c).unwrap();
        assert_eq!(w.weights.dom, 0.0);
        assert_eq!(w.weights.beta, 0.0);
        assert_eq!(w.weights.cls, c.weights.cls);
        assert_eq!(w.class_loss, ClassLossKind::Pointwise);
        assert!(w.use_bilinear);
        assert!(!w.pool_domains);

        let mut c = quick_config();
        c.ablation.no_domain_prototype = true;
        let w = ablation_apply(&c).unwrap();
        assert!(w.pool_domains);
    }

    #[test]
    fn dann_warmup_has_the_documented_shape() {
        let s = GrlSchedule::DannWarmup;
        assert!(s.lambda_at(0.0).abs() < 1e-12);
        let mid = 2.0 / (1.0 + (-5.0f64).exp()) - 1.0;
        assert!((s.lambda_at(0.5) - mid).abs() < 1e-12);
        assert!(s.lambda_at(1.0) > 0.9999);
        assert!(s.lambda_at(0.3) < s.lambda_at(0.6));
        let f = GrlSchedule::default();
        assert_eq!(f.lambda_at(0.0), 1.0);
        assert_eq!(f.lambda_at(1.0), 1.0);
    }

    #[test]
    fn same_seed_trains_bit_identical_weights() {
        let data = tiny_synth(1);
        let set = source_set(&data);
        let a = train(&quick_config(), &set).unwrap();
        let b = train(&quick_config(), &set).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.store, b.store);
        let mut c2 = quick_config();
        c2.seed = 6;
        let c = train(&c2, &set).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn zero_weighted_objective_leaves_weights_at_init() {
        let data = tiny_synth(2);
        let set = source_set(&data);
        let mut config = quick_config();
        config.weights = LossWeights {
            cls: 0.0,
            dom: 0.0,
            pair: 0.0,
            beta: 0.0,
        };
        let out = train(&config, &set).unwrap();
        let dims = ModelDims {
            feature_dim: 20,
            hidden_shallow: config.hidden_shallow,
            hidden: config.hidden,
            n_classes: set.n_classes,
            n_domains: set.n_domains,
        };
        let init = ModelParams::init(dims, config.seed).unwrap();
        assert_eq!(out.params, init);
    }

    #[test]
    fn bilinear_form_receives_no_gradient_from_hard_selection() {
        // Domain choice is an argmax over scores, so the bilinear form only
        // ever sits upstream of a discrete selection: its entries must remain
        // exactly at initialization while everything else moves.
        let data = tiny_synth(3);
        let set = source_set(&data);
        let config = quick_config();
        let out = train(&config, &set).unwrap();
        let dims = ModelDims {
            feature_dim: 20,
            hidden_shallow: config.hidden_shallow,
            hidden: config.hidden,
            n_classes: set.n_classes,
            n_domains: set.n_domains,
        };
        let init = ModelParams::init(dims, config.seed).unwrap();
        assert_eq!(out.params.bilinear, init.bilinear);
        assert_ne!(out.params.extractor[0].weight, init.extractor[0].weight);
    }

    #[test]
    fn provenance_covers_exactly_the_source_ids() {
        let data = tiny_synth(4);
        let set = source_set(&data);
        let out = train(&quick_config(), &set).unwrap();
        assert_eq!(out.provenance.distinct(), set.len());
        for &id in &set.sample_ids {
            assert!(out.provenance.consumed(id) > 0);
        }
        // Ids outside the set were never consumed.
        assert_eq!(out.provenance.consumed(u64::MAX), 0);
    }

    #[test]
    fn undersized_trailing_batches_are_skipped_and_counted() {
        let data = tiny_synth(5);
        let set = source_set(&data); // 96 samples
        let mut config = quick_config();
        config.batch_size = 95; // leaves a 1-sample remainder every epoch
        config.epochs = 2;
        let out = train(&config, &set).unwrap();
        for t in &out.trace {
            assert_eq!(t.skipped_batches, 1);
        }
    }

    #[test]
    fn training_fits_the_separable_synthetic_set() {
        let data = tiny_synth(6);
        let set = source_set(&data);
        let mut config = quick_config();
        config.epochs = 30;
        config.batch_size = 24;
        let out = train(&config, &set).unwrap();

        let preds = predict(&out.params, &out.store, &set.features, out.wiring.use_bilinear).unwrap();
        let correct = preds
            .iter()
            .zip(&set.labels)
            .filter(|(p, &y)| p.label == y)
            .count();
        let acc = correct as f64 / set.len() as f64;
        assert!(acc >= 0.95, "training accuracy {acc}");
        // The class-alignment term should have dropped from the first epoch.
        // (The total can rise: the adversarial discriminator terms climb as
        // the extractor succeeds at confusing them.)
        let first = out.trace.first().unwrap().pairwise;
        let last = out.trace.last().unwrap().pairwise;
        assert!(
            last < first,
            "pairwise loss did not decrease: {first} -> {last}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_preserves_predictions() {
        let data = tiny_synth(7);
        let set = source_set(&data);
        let config = quick_config();
        let out = train(&config, &set).unwrap();
        let before = predict(&out.params, &out.store, &set.features, true).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let ckpt = Checkpoint::new(&config, out.params, out.store);
        ckpt.save(&path).unwrap();

        let loaded = Checkpoint::load_matching(&path, &config).unwrap();
        assert_eq!(loaded.params, ckpt.params);
        assert_eq!(loaded.store, ckpt.store);
        let after = predict(&loaded.params, &loaded.store, &set.features, true).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.domain, b.domain);
        }
    }

    #[test]
    fn checkpoint_rejects_mismatched_fingerprints_and_corrupt_files() {
        let data = tiny_synth(8);
        let set = source_set(&data);
        let config = quick_config();
        let out = train(&config, &set).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        Checkpoint::new(&config, out.params, out.store).save(&path).unwrap();

        let mut other = config.clone();
        other.learning_rate = 5e-4;
        let err = Checkpoint::load_matching(&path, &other).unwrap_err().to_string();
        assert!(err.contains(&config.fingerprint()), "{err}");
        assert!(err.contains(&other.fingerprint()), "{err}");

        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }

    #[test]
    fn non_finite_features_abort_with_context() {
        let data = tiny_synth(9);
        let mut set = source_set(&data);
        *set.features.at_mut(3, 3) = f64::NAN;
        let err = train(&quick_config(), &set).unwrap_err().to_string();
        assert!(err.contains("finite") || err.contains("non-finite"), "{err}");
    }

    #[test]
    fn store_refresh_matches_an_independent_accumulator() {
        let data = tiny_synth(10);
        let set = source_set(&data);
        let config = quick_config();
        let out = train(&config, &set).unwrap();

        // Independent pass: reverse iteration order, explicit running means.
        let (xc, xd) = crate::prototypes::forward_in_chunks(&out.params, &set.features).unwrap();
        for d in 0..set.n_domains {
            let mut mean = vec![0.0; config.hidden];
            let mut n = 0.0;
            for i in (0..set.len()).rev() {
                if set.domain_ids[i] == d {
                    n += 1.0;
                    for (m, &x) in mean.iter_mut().zip(xd.row(i)) {
                        *m += (x - *m) / n;
                    }
                }
            }
            for (k, &m) in mean.iter().enumerate() {
                assert!((out.store.domain_protos.at(d, k) - m).abs() < 1e-9);
            }
        }
        for d in 0..set.n_domains {
            for class in 0..set.n_classes {
                assert!(out.store.present[d][class]);
                let mut mean = vec![0.0; config.hidden];
                let mut n = 0.0;
                for i in (0..set.len()).rev() {
                    if set.domain_ids[i] == d && set.labels[i] == class as u32 {
                        n += 1.0;
                        for (m, &x) in mean.iter_mut().zip(xc.row(i)) {
                            *m += (x - *m) / n;
                        }
                    }
                }
                for (k, &m) in mean.iter().enumerate() {
                    assert!((out.store.class_protos[d].at(class, k) - m).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pooled_prototype_ablation_trains_and_predicts() {
        let data = tiny_synth(11);
        let set = source_set(&data);
        let mut config = quick_config();
        config.ablation.no_domain_prototype = true;
        let out = train(&config, &set).unwrap();
        assert_eq!(out.store.n_domains(), 1);
        let preds = predict(&out.params, &out.store, &set.features, out.wiring.use_bilinear).unwrap();
        assert!(preds.iter().all(|p| p.domain == 0));
    }
}
