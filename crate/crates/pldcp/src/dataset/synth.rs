//! Synthetic multi-subject dataset with controllable class separation,
//! per-subject shift, and noise: x = W (c_k + a_n + eps).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Manifest, Sample};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub n_sessions: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub latent_dim: usize,
    pub feature_dim: usize,
    /// Minimum pairwise distance between latent class centers.
    pub class_separation: f64,
    /// L2 norm of every subject's latent offset.
    pub subject_shift: f64,
    /// Std-dev of the latent Gaussian noise added per sample.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 10,
            n_sessions: 1,
            n_classes: 3,
            samples_per_class: 60,
            latent_dim: 16,
            feature_dim: 310,
            class_separation: 10.0,
            subject_shift: 2.0,
            noise_sigma: 0.5,
            seed: 0,
        }
    }
}

/// Deterministically generate a dataset from the config (same seed, same bits).
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    if config.n_subjects < 1 || config.n_classes < 2 {
        return Err(Error::Config(
            "generator needs at least 1 subject and 2 classes".into(),
        ));
    }
    if config.latent_dim < config.n_classes {
        return Err(Error::Config(format!(
            "latent_dim {} is too small to separate {} classes (need latent_dim >= n_classes)",
            config.latent_dim, config.n_classes
        )));
    }
    if config.samples_per_class < 1 || config.feature_dim < 1 || config.n_sessions < 1 {
        return Err(Error::Config(
            "samples_per_class, feature_dim and n_sessions must all be >= 1".into(),
        ));
    }
    if config.class_separation < 0.0 || config.subject_shift < 0.0 || config.noise_sigma < 0.0 {
        return Err(Error::Config(
            "class_separation, subject_shift and noise_sigma must be non-negative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let standard = Normal::new(0.0, 1.0).expect("unit normal");

    // Axis-aligned centers: distinct one-hot directions scaled so every pair
    // sits exactly `class_separation` apart.
    let scale = config.class_separation / std::f64::consts::SQRT_2;
    let mut centers = vec![vec![0.0; config.latent_dim]; config.n_classes];
    for (k, c) in centers.iter_mut().enumerate() {
        c[k] = scale;
    }

    // Fixed mixing matrix, feature_dim x latent_dim.
    let w_scale = 1.0 / (config.latent_dim as f64).sqrt();
    let mixing: Vec<Vec<f64>> = (0..config.feature_dim)
        .map(|_| {
            (0..config.latent_dim)
                .map(|_| standard.sample(&mut rng) * w_scale)
                .collect()
        })
        .collect();

    // Per-subject latent offsets with exact norm `subject_shift`.
    let offsets: Vec<Vec<f64>> = (0..config.n_subjects)
        .map(|_| {
            let mut v: Vec<f64> = (0..config.latent_dim)
                .map(|_| standard.sample(&mut rng))
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in v.iter_mut() {
                    *x *= config.subject_shift / norm;
                }
            }
            v
        })
        .collect();

    let mut samples = Vec::new();
    let mut latent = vec![0.0; config.latent_dim];
    for subject in 0..config.n_subjects {
        for session in 0..config.n_sessions {
            for class in 0..config.n_classes {
                for rep in 0..config.samples_per_class {
                    for (i, l) in latent.iter_mut().enumerate() {
                        *l = centers[class][i]
                            + offsets[subject][i]
                            + config.noise_sigma * standard.sample(&mut rng);
                    }
                    let features: Vec<f64> = mixing
                        .iter()
                        .map(|row| row.iter().zip(&latent).map(|(&w, &z)| w * z).sum())
                        .collect();
                    samples.push(Sample {
                        id: samples.len() as u64,
                        subject: subject as u32 + 1,
                        session: session as u32 + 1,
                        trial: (class * config.samples_per_class + rep) as u32,
                        label: class as u32,
                        features,
                    });
                }
            }
        }
    }

    Ok(Dataset {
        samples,
        manifest: Manifest {
            feature_dim: config.feature_dim,
            n_classes: config.n_classes,
            label_names: (0..config.n_classes).map(|k| format!("class_{k}")).collect(),
            bands: vec![],
            channels: 0,
        },
    })
}
