//! Layer-level fixtures shared by integration and acceptance tests.

#![allow(dead_code)]

use samt_core::costmodel::{HardwareConfig, LayerMapping};
use samt_core::mapping::{Dim, GemmShape, Genome, Level};
use samt_core::workload::{build_layer, ModelDims};

/// Whole matrices at the inter level on one cluster, so every operand crosses
/// the off-chip boundary exactly once. Needs an S2 that holds all operands.
pub fn refetch_free(shape: &GemmShape) -> Genome {
    let t = [shape.m, shape.n, shape.k];
    Genome::new(
        Level::from_parts(1, Dim::ALL, Dim::K, t),
        Level::from_parts(1, Dim::ALL, Dim::K, [1; 3]),
    )
}

pub fn refetch_free_layer(dims: &ModelDims) -> LayerMapping {
    build_layer(dims)
        .unwrap()
        .iter()
        .filter(|o| o.is_gemm())
        .map(|o| (o.id, refetch_free(&GemmShape::from(o))))
        .collect()
}

/// Edge hardware with an S2 large enough for whole-matrix tiles.
pub fn roomy_edge() -> HardwareConfig {
    HardwareConfig { s2_bytes: 1 << 32, ..HardwareConfig::edge() }
}
