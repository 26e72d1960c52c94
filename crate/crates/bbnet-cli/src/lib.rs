//! Desk-scale harness around `bbnet-core`: dataset scanning and loading,
//! synthetic data generation, training, prediction, and evaluation.

pub mod ablate;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod evalcmd;
pub mod fsutil;
pub mod imgio;
pub mod predict;
pub mod stats;
pub mod synth;
pub mod train;
