//! Traffic-volume forecasting with a from-scratch stacked LSTM.
//!
//! The crate provides the full pipeline: CSV ingestion and 15-minute bin
//! aggregation, rolling-window dataset construction, stacked-LSTM and dense
//! baseline models with hand-derived backpropagation through time, gradient
//! clipping, early stopping, adaptive learning rate, checkpointing, and
//! evaluation metrics. The `trafficast` binary wires it into `ingest`,
//! `train`, `eval`, `predict`, and `gradcheck` commands.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod nn;
pub mod optim;
pub mod train;

pub use error::{Error, Result};
