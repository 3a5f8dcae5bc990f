//! Experiment orchestration for the relevance estimation toolkit:
//! configuration, artifact management, pipeline stages, and closed-form
//! verification reports. The `relest` binary is a thin wrapper over this
//! library so tests can drive the same code paths in-process.

pub mod artifact;
pub mod config;
pub mod error;
pub mod stages;
pub mod theory;
