//! Multilingual sentiment-transfer experimentation toolkit.
//!
//! The crate is organised around the stages of an experiment:
//!
//! - [`corpus`]: style-parallel datasets, deterministic splits and directional views.
//! - [`adapters`]: backend-agnostic model contracts plus small built-in backends.
//! - [`attribution`]: integrated-gradients word attributions and style-word masking.
//! - [`pipelines`]: dataset builders, training and inference for every methodology.
//! - [`metrics`]: ACC, BLEU, CS, PPL and AVG, assembled into [`metrics::MetricReport`]s.
//! - [`llm`]: few-shot prompt construction and completion handling for hosted LLMs.
//! - [`report`]: results tables, plots and human-evaluation sheets.
//! - [`config`] / [`orchestrate`]: config-driven experiment runs with stage manifests.
//!
//! Hot inner loops go through [`exec::Exec`], which dispatches to rayon when the
//! `parallel` feature is enabled and runs sequentially otherwise.

pub mod adapters;
pub mod attribution;
pub mod config;
pub mod corpus;
pub mod exec;
pub mod llm;
pub mod metrics;
pub mod orchestrate;
pub mod pipelines;
pub mod report;

mod error;
mod util;

pub use error::{Error, Result};

pub use corpus::{Corpus, Direction, DirectedExample, LanguageTag, Polarity, SplitSpec, StylePair};
pub use exec::Exec;
