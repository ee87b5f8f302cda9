//! Analog hardware-aware LoRA at desk scale.
//!
//! This crate simulates PCM-based analog in-memory compute tiles (programming
//! noise, conductance drift, read noise, quantized converters), trains low-rank
//! adapters against those constraints on a tiny transformer, and evaluates the
//! latency/memory balance of a hybrid analog-tile + digital-cluster pipeline.
//!
//! The main entry points, in dependency order:
//!
//! - [`device`]: statistical PCM device physics (seeded, reproducible).
//! - [`quant`]: the symmetric mid-tread uniform quantizer used by DACs/ADCs.
//! - [`tile`]: weight-to-conductance mapping, programming, quantized analog
//!   matrix-vector products, and global drift compensation.
//! - [`nn`]: a tiny transformer with hand-derived gradients whose dense layers
//!   route through a hardware-aware training path or a programmed-tile path;
//!   LoRA adapters are the only trainable state after deployment.
//! - [`train`]: Adam with linear decay, synthetic tasks, drift-sweep
//!   evaluation, adapter hot-swapping, and parameter accounting.
//! - [`perf`]: the analytic latency and scratchpad-memory model of the hybrid
//!   pipeline.
//! - [`config`] / [`runner`] / [`report`]: the JSON-configured experiment
//!   runner behind the `ahwa` binary and the runnable examples.
//!
//! Every stochastic operation takes an explicit RNG (or seed), so any result
//! in this crate is bit-reproducible from `(config, seed)`.

pub mod config;
pub mod device;
pub mod nn;
pub mod perf;
pub mod quant;
pub mod report;
pub mod runner;
pub mod tile;
pub mod train;
pub mod util;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Matrix/vector dimensions do not conform.
    #[error("shape error: {0}")]
    Shape(String),
    /// An operation was called on an object in the wrong lifecycle state.
    #[error("state error: {0}")]
    State(String),
    /// Calibration could not produce a usable result.
    #[error("calibration error: {0}")]
    Calibration(String),
    /// A task id is not present in the adapter registry.
    #[error("unknown task: {0}")]
    UnknownTask(String),
    /// Configuration failed to parse or validate.
    #[error("config error: {0}")]
    Config(String),
    /// Training diverged (NaN/Inf loss or sustained blow-up).
    #[error("training collapsed at step {step} (loss {loss})")]
    Collapse { step: usize, loss: f64 },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
