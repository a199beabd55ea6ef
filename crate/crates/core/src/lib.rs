//! Attentive tabular classification for crash-severity data.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffgraph`]: a small define-by-run reverse-mode differentiation engine over dense
//!   2-D `f64` tensors.
//! - [`simplex`]: sparsemax and α-entmax projections onto the probability simplex.
//! - [`tabnet`]: the attentive classifier (feature transformers, attentive transformers,
//!   prior-scaled masks), its Adam trainer, bootstrap ensembles and checkpoints.
//! - [`dataset`]: schema-driven CSV encoding plus a synthetic fixture generator.
//! - [`resample`]: stratified splitting and SMOTE oversampling.
//! - [`metrics`]: confusion matrices and per-class precision / recall / F1.
//! - [`attribution`]: exact and sampled Shapley values over any batch predictor.
//! - [`search`]: grid and random hyperparameter search with stratified k-fold CV.

pub mod attribution;
pub mod dataset;
pub mod diffgraph;
mod error;
pub mod metrics;
pub mod resample;
pub mod rng;
pub mod search;
pub mod simplex;
pub mod tabnet;

pub use error::{Error, Result};
