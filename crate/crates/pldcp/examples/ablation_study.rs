//! Knock out one model component at a time and re-run LOSO for each variant.
//!
//! The first row is the full model; every other row disables exactly one
//! piece (domain prototypes, a discriminator, the pairwise loss, the
//! bilinear domain similarity, or the orthogonality regularizer) with the
//! same fold seeds, so rows are directly comparable.
//!
//!     cargo run --example ablation_study

use pldcp::dataset::{generate, Protocol, SynthConfig};
use pldcp::error::Result;
use pldcp::experiments::run_ablation;
use pldcp::trainer::{AblationFlags, TrainConfig};

fn main() -> Result<()> {
    let dataset = generate(&SynthConfig {
        n_subjects: 5,
        samples_per_class: 20,
        feature_dim: 48,
        seed: 9,
        ..Default::default()
    })?;

    let config = TrainConfig {
        epochs: 15,
        batch_size: 50,
        hidden_shallow: 32,
        hidden: 16,
        seed: 1,
        ..Default::default()
    };

    let variants = vec![
        AblationFlags { no_domain_prototype: true, ..Default::default() },
        AblationFlags { no_dom_disc: true, ..Default::default() },
        AblationFlags { no_cls_disc: true, ..Default::default() },
        AblationFlags { no_pairwise: true, ..Default::default() },
        AblationFlags { no_bilinear_s: true, ..Default::default() },
        AblationFlags { no_soft_reg: true, ..Default::default() },
    ];

    let report = run_ablation(&dataset, Protocol::SingleSession, &variants, &config, 1)?;

    let full = report.rows[0].loso.mean_accuracy;
    println!("{:<22} {:>12} {:>9}", "variant", "accuracy", "vs full");
    for row in &report.rows {
        println!(
            "{:<22} {:>12} {:>+8.2}pp",
            row.name,
            row.loso.formatted(),
            row.loso.mean_accuracy - full,
        );
    }
    Ok(())
}
