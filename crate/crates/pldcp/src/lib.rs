//! Subject-independent EEG emotion recognition via pairwise learning over
//! domain and class prototypes.
//!
//! A shared shallow extractor feeds two disentanglers — domain features and
//! class features — trained adversarially through gradient reversal. Per
//! source subject, the trainer maintains a prototype store (a domain mean
//! plus per-class means); an unseen subject is classified by picking the
//! most similar source domain with a learned bilinear form, then the class
//! by cosine against that domain's class prototypes. The class loss is
//! pairwise (agreement between samples), which holds up under label noise
//! where per-sample targets do not.
//!
//! The runnable examples are the primary entry points:
//!
//! ```text
//! cargo run --example gradient_check      # autodiff vs finite differences
//! cargo run --example synthetic_dataset   # generator + exact CSV round-trip
//! cargo run --example feature_extraction  # raw signal -> band-entropy features
//! cargo run --example train_and_predict   # full training loop + inference
//! cargo run --example loso_evaluation     # leave-one-subject-out benchmark
//! cargo run --example noise_robustness    # pairwise vs pointwise under noise
//! cargo run --example ablation_study      # component knock-out table
//! cargo run --example export_embeddings   # disentangled features to CSV
//! ```
//!
//! The same capabilities are scriptable through the thin `pldcp` binary
//! (`cargo run -- --help`), which adds run manifests, checkpoints, and
//! report files around the library calls.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod matrix;
pub mod network;
pub mod objectives;
pub mod prototypes;
pub mod signal;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
