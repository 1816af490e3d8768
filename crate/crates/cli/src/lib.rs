//! Experiment harness for meta-learned no-reference image quality
//! assessment: configuration, the four protocols (leave-one-family-out,
//! 80/20 random split, meta-vs-pooled ablation, k/S sweep), checkpoint
//! persistence, and deterministic results emission.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod protocols;
pub mod results;
