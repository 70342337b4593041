//! Weak-supervision phenotype prediction from electronic health records.
//!
//! The pipeline turns a patient cohort (diagnosis/medication codes, lab
//! flags, demographics, free-text notes) plus a rule definition into
//! silver-standard labels, trains three neural classifiers (structured-only,
//! text-only, fused) and a logistic baseline on those labels, and combines
//! the classifiers with majority-vote and accuracy-weighted label-model
//! ensembles. Everything is deterministic for a fixed seed.

pub mod cohort;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod models;
pub mod nncore;
pub mod preprocess;

pub use error::{Error, Result};
