//! Compare pairwise and pointwise class losses under corrupted source labels.
//!
//! Flips a fraction of source-split labels (targets stay clean), runs LOSO
//! for each (ratio, strategy) cell with paired fold seeds, and prints how
//! much each strategy loses relative to its own clean baseline. The pairwise
//! loss compares label agreement between sample pairs, so single bad labels
//! damp out instead of anchoring a hard per-sample target.
//!
//!     cargo run --example noise_robustness

use pldcp::dataset::{generate, Protocol, SynthConfig};
use pldcp::error::Result;
use pldcp::experiments::{run_noise_sweep, Strategy};
use pldcp::trainer::TrainConfig;

fn main() -> Result<()> {
    let dataset = generate(&SynthConfig {
        n_subjects: 5,
        samples_per_class: 24,
        feature_dim: 48,
        noise_sigma: 0.8,
        seed: 6,
        ..Default::default()
    })?;

    let config = TrainConfig {
        epochs: 15,
        batch_size: 48,
        hidden_shallow: 32,
        hidden: 16,
        seed: 3,
        ..Default::default()
    };
    let ratios = [0.0, 0.3];
    let strategies = [Strategy::Pairwise, Strategy::Pointwise];

    let report = run_noise_sweep(
        &dataset,
        Protocol::SingleSession,
        &ratios,
        &strategies,
        &config,
        1,
    )?;

    println!("{:<11} {:>12} {:>12} {:>8}", "strategy", "clean", "30% noise", "drop");
    for strategy in strategies {
        let clean = report.cell(0.0, strategy).expect("clean cell");
        let noisy = report.cell(0.3, strategy).expect("noisy cell");
        println!(
            "{:<11} {:>12} {:>12} {:>7.2}pp",
            strategy.name(),
            clean.loso.formatted(),
            noisy.loso.formatted(),
            clean.loso.mean_accuracy - noisy.loso.mean_accuracy,
        );
    }
    Ok(())
}
