//! Deterministic federated-learning simulator with cluster-based client
//! selection.
//!
//! Clients train a shared model on private, label-skewed data. After a
//! warmup the server clusters clients by the similarity of their model
//! updates and lets one representative per cluster train each round. The
//! number of clusters is steered by a feedback controller driven by the
//! round-average training loss, with the aim of uploading fewer models
//! than plain FedAvg at similar accuracy.
//!
//! Module map:
//! - [`nn`]: dense/conv models, backpropagation, SGD, local training.
//! - [`data`]: IDX ingestion, label filtering, non-IID partitioning, synthetic blobs.
//! - [`similarity`]: cosine distances between client update vectors.
//! - [`clustering`]: agglomerative clustering and dendrogram cuts.
//! - [`controller`]: the adaptive cluster-count controller.
//! - [`federation`]: round loop, aggregation, selection, transmission ledger.
//! - [`config`], [`metrics`], [`cli`]: the runnable surface.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod controller;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod similarity;

pub use error::{Error, Result};
