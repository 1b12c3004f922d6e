//! Train the full model on a synthetic source pool and predict with the
//! frozen prototype store.
//!
//! Shows the loss trajectory (the discriminator terms climb as the shared
//! extractor learns to confuse them — that is the adversarial part working,
//! not a bug), then runs inference and prints accuracy plus a handful of
//! per-sample domain/class decisions.
//!
//!     cargo run --example train_and_predict

use pldcp::dataset::{generate, DomainKey, SourceDomainSet, SynthConfig};
use pldcp::error::Result;
use pldcp::matrix::Matrix;
use pldcp::prototypes::predict;
use pldcp::trainer::{train, TrainConfig};

fn main() -> Result<()> {
    let data_cfg = SynthConfig {
        n_subjects: 5,
        samples_per_class: 20,
        feature_dim: 48,
        seed: 2,
        ..Default::default()
    };
    let dataset = generate(&data_cfg)?;
    let refs: Vec<_> = dataset.samples.iter().collect();
    let set = SourceDomainSet::from_samples(&refs, DomainKey::Subject, dataset.manifest.n_classes)?;

    let config = TrainConfig {
        epochs: 20,
        batch_size: 60,
        hidden_shallow: 32,
        hidden: 16,
        seed: 7,
        ..Default::default()
    };
    println!("config fingerprint {}", &config.fingerprint()[..16]);

    let out = train(&config, &set)?;
    for t in out.trace.iter().step_by(5).chain(out.trace.last()) {
        println!(
            "epoch {:>3}: grl {:.2}  cls {:.3}  dom {:.3}  pair {:.4}  reg {:.3}",
            t.epoch, t.grl_lambda, t.cls_disc, t.dom_disc, t.pairwise, t.reg
        );
    }

    let mut features = Matrix::zeros(dataset.samples.len(), dataset.manifest.feature_dim);
    for (r, s) in dataset.samples.iter().enumerate() {
        features.row_mut(r).copy_from_slice(&s.features);
    }
    let preds = predict(&out.params, &out.store, &features, true)?;

    let correct = dataset
        .samples
        .iter()
        .zip(&preds)
        .filter(|(s, p)| s.label == p.label)
        .count();
    println!(
        "\ntraining-pool accuracy {}/{} = {:.1}%",
        correct,
        preds.len(),
        100.0 * correct as f64 / preds.len() as f64
    );

    println!("\nfirst samples (domain prototype chosen, then class within it):");
    for (s, p) in dataset.samples.iter().zip(&preds).step_by(37).take(5) {
        println!(
            "  sample {:>3} subject {}: domain {} -> class {} (true {}), p = {:?}",
            s.id,
            s.subject,
            p.domain,
            p.label,
            s.label,
            p.probabilities
                .iter()
                .map(|v| (v * 100.0).round() / 100.0)
                .collect::<Vec<_>>()
        );
    }
    Ok(())
}
