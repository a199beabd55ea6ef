//! Attentive tabular classifier.
//!
//! Forward pass: batch-normalised input → initial feature transformer, whose attention
//! slice seeds the first step. Each step builds a mask from an attentive transformer
//! (FC, batch norm, prior scaling, simplex mapping), relaxes the prior with
//! `P ← P ⊙ (gamma − M)`, and sends `M ⊙ x` through a feature transformer whose
//! decision slice is rectified and summed across steps before the final FC.

mod checkpoint;
mod config;
mod model;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::{MaskType, TabNetConfig, CONFIG_KEYS};
pub use model::{ForwardOutput, NamedTensor, StepTrace, TabNetModel};
pub use train::{
    bootstrap_resamples, train, train_bootstrap, train_on_resamples, Ensemble, EpochRecord, TrainReport,
};
