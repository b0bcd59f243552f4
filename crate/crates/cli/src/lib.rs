//! Experiment pipelines and report rendering for the `pvnlab` binary.

pub mod pipeline;
pub mod report;
