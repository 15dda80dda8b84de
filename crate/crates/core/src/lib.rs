//! Correcting ensembles for legacy classifiers.
//!
//! Given feature vectors tapped from a classifier and tagged as correct or
//! erroneous, this crate builds ensembles of linear threshold nodes (optionally
//! cascaded in pairs) that fire on the errors and stay silent on normal
//! operation. It also evaluates the stochastic separation bounds that explain
//! why such nodes work in high dimension, and checks them by Monte Carlo.
//!
//! Pipeline: [`preprocess`] (center, PCA, whiten, optional sphere projection)
//! → [`cluster`] the errors → [`nodes`] (Fisher hyperplane per cluster) →
//! optional [`cascade`] second stage → [`ensemble`] deployment and model files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cascade;
pub mod cluster;
pub mod data;
pub mod ensemble;
pub mod eval;
pub mod error;
pub mod linalg;
pub mod nodes;
pub mod preprocess;
pub mod theory;
pub mod rng;
pub mod synth;

pub use data::{LabeledDataset, Label};
pub use error::{Error, Result};
pub use rng::RngSpec;
