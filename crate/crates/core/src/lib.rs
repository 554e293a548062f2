//! Fusion and dataflow-mapping exploration for Transformer layers on spatial
//! accelerators.

pub mod costmodel;
pub mod fusion;
pub mod mapping;
pub mod search;
pub mod workload;
