//! Sample tables, domain indexing, leave-one-subject-out folds, label noise.

mod io;
mod synth;

pub use io::{dataset_checksum, load_dataset, manifest_path, save_dataset};
pub use synth::{generate, SynthConfig};

use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::BandSpec;

/// One feature vector with its provenance coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Stable id: position in the dataset it was loaded/generated from.
    pub id: u64,
    pub subject: u32,
    pub session: u32,
    pub trial: u32,
    pub label: u32,
    pub features: Vec<f64>,
}

/// Dataset sidecar describing the feature layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub feature_dim: usize,
    pub n_classes: usize,
    pub label_names: Vec<String>,
    pub bands: Vec<BandSpec>,
    pub channels: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self.samples.iter().map(|s| s.subject).collect();
        set.into_iter().collect()
    }

    pub fn by_id(&self, id: u64) -> Option<&Sample> {
        // Ids are assigned positionally on load/generation.
        self.samples.get(id as usize).filter(|s| s.id == id)
    }
}

/// What counts as one training domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainKey {
    Subject,
    SubjectSession,
}

/// Cross-validation protocol for leave-one-subject-out splits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Session 1 only, on both sides of every fold.
    SingleSession,
    /// Every session of the held-out subject against every session of the rest.
    CrossSession,
}

/// One leave-one-subject-out fold, as sample id lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldSpec {
    pub target_subject: u32,
    pub source_ids: Vec<u64>,
    pub target_ids: Vec<u64>,
}

/// Training view of a set of samples: dense features plus contiguous domain ids.
#[derive(Clone, Debug)]
pub struct SourceDomainSet {
    pub features: Matrix,
    pub labels: Vec<u32>,
    /// Contiguous in [0, n_domains).
    pub domain_ids: Vec<usize>,
    pub sample_ids: Vec<u64>,
    pub n_domains: usize,
    pub n_classes: usize,
    pub domain_names: Vec<String>,
}

impl SourceDomainSet {
    pub fn from_samples(samples: &[&Sample], key: DomainKey, n_classes: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot build a domain set from zero samples".into()));
        }
        let feature_dim = samples[0].features.len();
        let mut keys: BTreeSet<(u32, u32)> = BTreeSet::new();
        for s in samples {
            if s.features.len() != feature_dim {
                return Err(Error::shape(
                    "SourceDomainSet",
                    format!("{feature_dim} features"),
                    format!("{} features on sample {}", s.features.len(), s.id),
                ));
            }
            if s.label as usize >= n_classes {
                return Err(Error::Data(format!(
                    "sample {} has label {} but the dataset declares {} classes",
                    s.id, s.label, n_classes
                )));
            }
            keys.insert(domain_key_of(s, key));
        }
        let keys: Vec<(u32, u32)> = keys.into_iter().collect();
        let domain_names = keys
            .iter()
            .map(|&(subj, sess)| match key {
                DomainKey::Subject => format!("subject {subj}"),
                DomainKey::SubjectSession => format!("subject {subj} session {sess}"),
            })
            .collect();

        let mut features = Matrix::zeros(samples.len(), feature_dim);
        let mut labels = Vec::with_capacity(samples.len());
        let mut domain_ids = Vec::with_capacity(samples.len());
        let mut sample_ids = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            features.row_mut(i).copy_from_slice(&s.features);
            labels.push(s.label);
            let k = domain_key_of(s, key);
            domain_ids.push(keys.binary_search(&k).expect("key indexed above"));
            sample_ids.push(s.id);
        }
        Ok(SourceDomainSet {
            features,
            labels,
            domain_ids,
            sample_ids,
            n_domains: keys.len(),
            n_classes,
            domain_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn domain_key_of(s: &Sample, key: DomainKey) -> (u32, u32) {
    match key {
        DomainKey::Subject => (s.subject, 0),
        DomainKey::SubjectSession => (s.subject, s.session),
    }
}

/// Leave-one-subject-out folds, ordered by held-out subject id.
pub fn loso_splits(dataset: &Dataset, protocol: Protocol) -> Result<Vec<FoldSpec>> {
    let subjects = dataset.subjects();
    if subjects.len() < 2 {
        return Err(Error::Data(format!(
            "leave-one-subject-out needs at least 2 subjects, found {}",
            subjects.len()
        )));
    }
    let mut folds = Vec::with_capacity(subjects.len());
    for &target in &subjects {
        let mut source_ids = Vec::new();
        let mut target_ids = Vec::new();
        for s in &dataset.samples {
            let in_scope = match protocol {
                Protocol::SingleSession => s.session == 1,
                Protocol::CrossSession => true,
            };
            if !in_scope {
                continue;
            }
            if s.subject == target {
                target_ids.push(s.id);
            } else {
                source_ids.push(s.id);
            }
        }
        if target_ids.is_empty() {
            return Err(Error::Data(format!(
                "subject {target} has no session-1 data under the single-session protocol"
            )));
        }
        folds.push(FoldSpec {
            target_subject: target,
            source_ids,
            target_ids,
        });
    }
    Ok(folds)
}

/// Outcome of a label corruption pass.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseReport {
    pub eta: f64,
    pub changed_ids: Vec<u64>,
}

/// Flip the labels of exactly round(eta * N) samples, chosen without
/// replacement; each new label is uniform over the other classes.
pub fn inject_label_noise(
    samples: &mut [Sample],
    eta: f64,
    n_classes: usize,
    seed: u64,
) -> Result<NoiseReport> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::Config(format!(
            "label noise ratio must be in [0, 1), got {eta}"
        )));
    }
    if n_classes < 2 {
        return Err(Error::Config(
            "label noise needs at least 2 classes to flip between".into(),
        ));
    }
    let n = samples.len();
    let k = (eta * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Partial Fisher-Yates: first k slots of a shuffled index vector.
    let mut order: Vec<usize> = (0..n).collect();
    for i in 0..k.min(n) {
        let j = rng.gen_range(i..n);
        order.swap(i, j);
    }
    let mut changed_ids = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let old = samples[idx].label;
        let draw = rng.gen_range(0..n_classes as u32 - 1);
        let new = if draw >= old { draw + 1 } else { draw };
        samples[idx].label = new;
        changed_ids.push(samples[idx].id);
    }
    changed_ids.sort_unstable();
    Ok(NoiseReport { eta, changed_ids })
}
