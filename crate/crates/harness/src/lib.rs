//! Synthetic graph-grounded saliency data, training and evaluation loops,
//! the knowledge ablation and the `grassnet` command line.

pub mod ablate;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod defaults;
pub mod evaluate;
pub mod synth;
pub mod train;
