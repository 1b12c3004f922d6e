//! Verify the hand-written backward pass against central finite differences.
//!
//! Builds a small fixed-seed model and batch, evaluates the full training
//! objective, and compares every analytic parameter gradient with a
//! two-sided numeric estimate.
//!
//!     cargo run --example gradient_check

use pldcp::error::Result;
use pldcp::objectives::{check_scenario, fd_check};

fn main() -> Result<()> {
    let seed = 29;
    let batch = 4;
    let eps = 1e-5;

    let scenario = check_scenario(seed, batch)?;
    println!(
        "scenario: {} features -> {} shallow -> {} disentangled, {} classes x {} domains, batch {}",
        scenario.params.dims.feature_dim,
        scenario.params.dims.hidden_shallow,
        scenario.params.dims.hidden,
        scenario.params.dims.n_classes,
        scenario.params.dims.n_domains,
        batch,
    );

    let report = fd_check(&scenario, eps)?;
    println!(
        "checked {} parameter entries with step {eps:.0e}",
        report.n_entries
    );
    println!(
        "max relative error {:.3e} (parameter {}, entry ({}, {}))",
        report.max_rel_err, report.worst.0, report.worst.1, report.worst.2
    );

    if report.max_rel_err < 1e-4 {
        println!("analytic gradients match finite differences");
    } else {
        println!("MISMATCH: gradients disagree beyond tolerance");
        std::process::exit(1);
    }
    Ok(())
}
