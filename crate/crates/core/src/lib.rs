//! Probabilistic linear discriminant analysis with two sources of
//! inter-session variability.
//!
//! An i-vector of speaker `i`, session `j`, channel `l` is modelled as
//! `φ = μ + V y_i + U x_ij + ε` with standard normal speaker and channel
//! factors and residual precision `W`. The crate provides exact posteriors
//! and marginal likelihoods, EM training with optional minimum-divergence
//! steps, trial scoring, seeded synthetic corpora and dense reference
//! computations for checking all of it.

pub mod cli;
pub mod datamodel;
pub mod em;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod scoring;
pub mod stats;
pub mod synth;

pub use datamodel::{HierarchicalLabelling, IVectorSet, Trial, TrialKey, TrialList};
pub use em::{train, train_stats, MdParams, TrainConfig, TrainReport};
pub use error::{Error, Result};
pub use model::{ModelDims, PldaModel};
pub use scoring::{score_trials, ScoreRecord, SessionPolicy};
pub use stats::{accumulate_stats, GlobalStats, SpeakerStats};
