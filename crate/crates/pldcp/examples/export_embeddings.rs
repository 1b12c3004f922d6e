//! Dump every sample's disentangled domain/class features to CSV.
//!
//! Trains on all subjects except one, then exports both halves of the
//! representation with a source/target split tag — the file downstream
//! plotting tools (t-SNE, UMAP) consume to visualize how class clusters
//! line up across subjects while domain features keep the subjects apart.
//!
//!     cargo run --example export_embeddings

use pldcp::dataset::{generate, loso_splits, DomainKey, Protocol, SourceDomainSet, SynthConfig};
use pldcp::error::{Error, Result};
use pldcp::experiments::write_embeddings_csv;
use pldcp::trainer::{train, TrainConfig};

fn main() -> Result<()> {
    let dataset = generate(&SynthConfig {
        n_subjects: 4,
        samples_per_class: 15,
        feature_dim: 32,
        seed: 12,
        ..Default::default()
    })?;

    // Hold subject 4 out, train on the rest.
    let folds = loso_splits(&dataset, Protocol::SingleSession)?;
    let fold = folds
        .iter()
        .find(|f| f.target_subject == 4)
        .expect("subject 4 exists");
    let sources: Vec<_> = dataset
        .samples
        .iter()
        .filter(|s| fold.source_ids.contains(&s.id))
        .collect();
    let set = SourceDomainSet::from_samples(&sources, DomainKey::Subject, dataset.manifest.n_classes)?;

    let config = TrainConfig {
        epochs: 10,
        batch_size: 45,
        hidden_shallow: 24,
        hidden: 12,
        seed: 5,
        ..Default::default()
    };
    let out = train(&config, &set)?;

    let dir = tempfile::tempdir().map_err(|e| Error::io("tempdir", e))?;
    let path = dir.path().join("embeddings.csv");
    write_embeddings_csv(&path, &out.params, &dataset, Some(fold))?;

    let text = std::fs::read_to_string(&path).map_err(|e| Error::io("reading export", e))?;
    let mut lines = text.lines();
    println!("header: {}", lines.next().unwrap());
    let (mut n_source, mut n_target) = (0, 0);
    for line in lines.clone() {
        match line.split(',').nth(2) {
            Some("source") => n_source += 1,
            Some("target") => n_target += 1,
            _ => {}
        }
    }
    println!("{n_source} source rows, {n_target} target rows (subject 4 held out)");
    for line in lines.take(2) {
        let cut: String = line.chars().take(72).collect();
        println!("  {cut}...");
    }
    Ok(())
}
