//! Entropy-driven global explicit memory for multi-hop question answering.
//!
//! A small transformer encoder with a frozen language-modeling head scores
//! every document token by the entropy of its predicted distribution. The
//! most certain tokens (or another policy's choice) form a global memory
//! that is concatenated to every question + context segment of a second,
//! task-tuned copy of the encoder.

pub mod error;
pub mod analysis;
pub mod cli;
pub mod config;
pub mod evalmetrics;
pub mod experiment;
pub mod io;
pub mod memory;
pub mod nnet;
pub mod pipeline;
pub mod synthdata;
pub mod text;

pub use error::{Error, Result};
