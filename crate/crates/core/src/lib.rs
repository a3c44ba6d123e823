//! Sentence-level spoiler detection for Goodreads-style book reviews.
//!
//! The crate covers the whole pipeline:
//!
//! * [`corpus`] parses review and title files, flattens reviews into labeled
//!   sentences, splits them by review and computes exploratory statistics.
//! * [`textprep`] normalizes text, builds a frequency-ranked vocabulary and
//!   encodes `title ++ sentence` into fixed-length id sequences.
//! * [`network`] is an embedding + two-layer LSTM classifier with exact
//!   backpropagation through time and Adam, written from scratch in `f64`.
//! * [`trainer`] runs seeded mini-batch training with best-epoch selection
//!   and checkpointing.
//! * [`features`] holds the DF-IIF word-specificity table and a logistic
//!   baseline over handcrafted features.
//! * [`metrics`] computes midrank ROC AUC, confusion counts and reports.
//! * [`synth`] generates skewed synthetic corpora with planted spoiler
//!   tokens, used for end-to-end checks.
//! * [`cli`] binds everything into the `spoiler` command line tool.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod features;
pub mod metrics;
pub mod network;
pub mod synth;
pub mod textprep;
pub mod trainer;

pub use error::{Error, Result};
