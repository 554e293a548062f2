//! Analytical cost model: latency, energy and scratchpad traffic of operators,
//! fused chains and whole layers.

mod gemm;
mod hardware;
mod layer;
mod report;

pub use gemm::{full_tile_utilization, gemm_counts, GemmCounts};
pub use hardware::{EnergyModel, HardwareConfig, GB_PER_SEC, KIB, MIB};
pub use layer::{evaluate_chain, evaluate_layer, plan_layer, LayerMapping, LayerReport, Stage};
pub use report::CostReport;

use crate::fusion::FusionError;
use crate::mapping::{footprints, validate, AcceleratorTemplate, GemmShape, Genome, Violation};
use crate::workload::{BaseOp, OpId, WorkloadError};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostError {
    #[error("invalid genome for {op}: {}", .violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid { op: OpId, violations: Vec<Violation> },
    #[error("{op}: mapping has no active PE")]
    Degenerate { op: OpId },
    #[error("chain {chain} does not fit S2: {tensor} overflows ({needed} B needed, {available} B available)")]
    Infeasible { chain: String, tensor: String, needed: u64, available: u64 },
    #[error("no genome given for {0}")]
    MissingGenome(OpId),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

/// Per-evaluation switches. `elide` drops the off-chip traffic of operand
/// A, B or C (inputs in order, then the output) because fusion keeps it on chip.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EvalOptions {
    pub elide: [bool; 3],
    pub forwarding: bool,
}

/// Evaluates one operator without fusion.
pub fn evaluate_op(genome: &Genome, op: &BaseOp, hw: &HardwareConfig) -> Result<CostReport, CostError> {
    evaluate_op_with(genome, op, hw, &EvalOptions::default())
}

/// Evaluates one operator. Elementwise operators ignore the genome.
pub fn evaluate_op_with(
    genome: &Genome,
    op: &BaseOp,
    hw: &HardwareConfig,
    opts: &EvalOptions,
) -> Result<CostReport, CostError> {
    if !op.is_gemm() {
        return Ok(evaluate_elementwise(op, hw, opts));
    }
    let shape = GemmShape::from(op);
    validate(genome, &shape, hw, &AcceleratorTemplate::flexible())
        .map_err(|violations| CostError::Invalid { op: op.id, violations })?;
    if genome.inter.cluster == 0 || genome.intra.cluster == 0 {
        return Err(CostError::Degenerate { op: op.id });
    }
    Ok(evaluate_gemm_unchecked(genome, op, hw, opts))
}

/// Evaluation of a genome already known to be valid for `op`.
pub(crate) fn evaluate_gemm_unchecked(
    genome: &Genome,
    op: &BaseOp,
    hw: &HardwareConfig,
    opts: &EvalOptions,
) -> CostReport {
    let shape = GemmShape::from(op);
    let c = gemm_counts(genome, &shape, opts.forwarding);
    let mut s3 = 0;
    if !opts.elide[0] {
        s3 += c.s3_a_reads;
    }
    if !opts.elide[1] {
        s3 += c.s3_b_reads;
    }
    if !opts.elide[2] {
        s3 += c.s3_c_writes + c.s3_c_reads;
    }
    let (s1_need, s2_need) = footprints(genome, &shape);
    CostReport {
        compute_cycles: c.compute_cycles * op.batch + op.nonlinear_flops.div_ceil(hw.pe_count),
        acc_s1: c.s1 * op.batch,
        acc_s2: c.s2 * op.batch,
        acc_s3: s3 * op.batch,
        full_tile_utilization: full_tile_utilization(genome, &shape, hw.pe_count),
        mac_count: op.mac_count(),
        nonlinear_ops: op.nonlinear_flops,
        s1_bytes_needed: s1_need,
        s2_bytes_needed: s2_need,
        ..CostReport::default()
    }
    .finish(hw)
}

/// Streaming elementwise operator: reads its input and writes its output once
/// through each level, one operation per PE per cycle.
pub fn evaluate_elementwise(op: &BaseOp, hw: &HardwareConfig, opts: &EvalOptions) -> CostReport {
    let bytes = op.output.elements() * op.bytes_per_element;
    let s3 = if opts.elide[0] { 0 } else { bytes } + if opts.elide[2] { 0 } else { bytes };
    CostReport {
        compute_cycles: op.nonlinear_flops.div_ceil(hw.pe_count),
        acc_s1: 2 * bytes,
        acc_s2: 2 * bytes,
        acc_s3: s3,
        nonlinear_ops: op.nonlinear_flops,
        ..CostReport::default()
    }
    .finish(hw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{build_layer, ModelDims};

    #[test]
    fn split_k_utilization_is_half() {
        let dims = ModelDims::prefill(3, 3, 1).with_d_ffn(3);
        let op = build_layer(&dims).unwrap().remove(0);
        assert_eq!((op.dims.m, op.dims.n, op.dims.k), (3, 3, 3));
        let hw = HardwareConfig { pe_count: 6, ..HardwareConfig::edge() };
        let g: Genome = "Cluster(1); TemporalMap(3,3) M; TemporalMap(3,3) N; SpatialMap(3,3) K;\n\
                         Cluster(3); TemporalMap(1,1) M; TemporalMap(1,1) N; SpatialMap(1,1) K;"
            .parse()
            .unwrap();
        let r = evaluate_op(&g, &op, &hw).unwrap();
        assert_eq!(r.pe_utilization, 0.5);
        assert_eq!(r.full_tile_utilization, 0.5);
        assert_eq!(r.mac_count, 27);
    }

    #[test]
    fn invalid_genome_is_rejected() {
        let dims = ModelDims::prefill(2, 2, 1).with_d_ffn(2);
        let op = build_layer(&dims).unwrap().remove(0);
        let g: Genome = "Cluster(1); TemporalMap(3,3) M; TemporalMap(2,2) N; SpatialMap(2,2) K;\n\
                         Cluster(1); TemporalMap(1,1) M; TemporalMap(1,1) N; SpatialMap(1,1) K;"
            .parse()
            .unwrap();
        assert!(matches!(evaluate_op(&g, &op, &HardwareConfig::edge()), Err(CostError::Invalid { .. })));
    }

    #[test]
    fn softmax_traffic() {
        let dims = ModelDims::prefill(4, 2, 1).with_d_ffn(4);
        let layer = build_layer(&dims).unwrap();
        let sm = &layer[4];
        let hw = HardwareConfig::edge();
        let plain = evaluate_elementwise(sm, &hw, &EvalOptions::default());
        assert_eq!(plain.acc_s3, 8);
        assert_eq!(plain.compute_cycles, 1);
        let fused = evaluate_elementwise(sm, &hw, &EvalOptions { elide: [true, false, true], forwarding: false });
        assert_eq!(fused.acc_s3, 0);
    }
}
