use super::{evaluate_op_with, CostError, CostReport, EvalOptions, HardwareConfig};
use crate::fusion::{decode, FusedChain, FusionCode};
use crate::mapping::{Dim, Genome, Level};
use crate::workload::{build_layer, BaseOp, ModelDims, OpId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// One genome per GEMM operator of the layer.
pub type LayerMapping = BTreeMap<OpId, Genome>;

/// An operator as it runs under a fusion code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub op: BaseOp,
    pub elide: [bool; 3],
    /// S2 left for the stage's own tiles once the chain's internal tensors are resident.
    pub s2_bytes: u64,
    pub chain: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub code: FusionCode,
    pub total: CostReport,
    pub per_op: Vec<(OpId, CostReport)>,
}

fn check_fits(chain: &FusedChain, bpe: u64, hw: &HardwareConfig) -> Result<u64, CostError> {
    if chain.s2_working_set <= hw.s2_bytes {
        return Ok(hw.s2_bytes - chain.internal_bytes(bpe));
    }
    // name the first tensor at which the running total no longer fits
    let mut used = chain.s2_working_set - chain.internal_bytes(bpe);
    let mut tensor = "external panels".to_string();
    if used <= hw.s2_bytes {
        for t in &chain.internal_tensors {
            used += t.rows * t.cols * bpe;
            if used > hw.s2_bytes {
                tensor = t.role.to_string();
                break;
            }
        }
    }
    Err(CostError::Infeasible {
        chain: chain.name.clone(),
        tensor,
        needed: chain.s2_working_set,
        available: hw.s2_bytes,
    })
}

fn chain_stages(chain: &FusedChain, layer: &[BaseOp], dims: &ModelDims, hw: &HardwareConfig) -> Result<Vec<Stage>, CostError> {
    let s2 = check_fits(chain, dims.bytes_per_element, hw)?;
    Ok(layer
        .iter()
        .filter(|o| chain.contains(o.id))
        .map(|o| {
            let elided = chain.elided_inputs(o, layer);
            let mut elide = [false; 3];
            for (i, t) in o.inputs.iter().enumerate().take(2) {
                elide[i] = elided.contains(&t.role);
            }
            elide[2] = chain.elides_output(o);
            Stage { op: o.clone(), elide, s2_bytes: s2, chain: Some(chain.name.clone()) }
        })
        .collect())
}

/// The nine operators of a layer in order, annotated with fusion effects.
pub fn plan_layer(code: FusionCode, dims: &ModelDims, hw: &HardwareConfig) -> Result<Vec<Stage>, CostError> {
    let layer = build_layer(dims)?;
    let decoded = decode(code, dims)?;
    let mut stages = Vec::with_capacity(layer.len());
    for chain in &decoded.chains {
        stages.extend(chain_stages(chain, &layer, dims, hw)?);
    }
    for op in &layer {
        if decoded.chain_of(op.id).is_none() {
            stages.push(Stage { op: op.clone(), elide: [false; 3], s2_bytes: hw.s2_bytes, chain: None });
        }
    }
    stages.sort_by_key(|s| s.op.id);
    Ok(stages)
}

fn run_stages(
    stages: &[Stage],
    genomes: &LayerMapping,
    hw: &HardwareConfig,
    forwarding: bool,
) -> Result<Vec<(OpId, CostReport)>, CostError> {
    let unit = Level::from_parts(1, Dim::ALL, Dim::K, [1; 3]);
    let placeholder = Genome::new(unit, unit);
    stages
        .iter()
        .map(|s| {
            let genome = if s.op.is_gemm() {
                genomes.get(&s.op.id).ok_or(CostError::MissingGenome(s.op.id))?
            } else {
                &placeholder
            };
            let stage_hw = hw.with_s2(s.s2_bytes);
            let opts = EvalOptions { elide: s.elide, forwarding };
            Ok((s.op.id, evaluate_op_with(genome, &s.op, &stage_hw, &opts)?))
        })
        .collect()
}

/// Evaluates the stages of one fused chain and sums them.
pub fn evaluate_chain(
    genomes: &LayerMapping,
    chain: &FusedChain,
    dims: &ModelDims,
    hw: &HardwareConfig,
    forwarding: bool,
) -> Result<CostReport, CostError> {
    let layer = build_layer(dims)?;
    let stages = chain_stages(chain, &layer, dims, hw)?;
    let parts = run_stages(&stages, genomes, hw, forwarding)?;
    Ok(CostReport::sequence(parts.iter().map(|(_, r)| r), hw))
}

/// Evaluates a full layer under a fusion code.
pub fn evaluate_layer(
    code: FusionCode,
    genomes: &LayerMapping,
    dims: &ModelDims,
    hw: &HardwareConfig,
    forwarding: bool,
) -> Result<LayerReport, CostError> {
    let stages = plan_layer(code, dims, hw)?;
    let per_op = run_stages(&stages, genomes, hw, forwarding)?;
    let total = CostReport::sequence(per_op.iter().map(|(_, r)| r), hw);
    Ok(LayerReport { code, total, per_op })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{default_genome, AcceleratorTemplate, GemmShape};

    fn mapping(dims: &ModelDims, hw: &HardwareConfig) -> LayerMapping {
        build_layer(dims)
            .unwrap()
            .iter()
            .filter(|o| o.is_gemm())
            .map(|o| {
                let g = default_genome(&AcceleratorTemplate::flexible(), &GemmShape::from(o), hw, 1).unwrap();
                (o.id, g)
            })
            .collect()
    }

    #[test]
    fn minimal_layer_is_finite() {
        let dims = ModelDims::prefill(1, 1, 1).with_d_ffn(1);
        let hw = HardwareConfig::edge();
        let r = evaluate_layer(FusionCode::ALL, &mapping(&dims, &hw), &dims, &hw, false).unwrap();
        assert!(r.total.latency_cycles > 0);
        assert!(r.total.energy_units.is_finite());
        assert_eq!(r.per_op.len(), 9);
    }

    #[test]
    fn plan_marks_internal_operands() {
        let dims = ModelDims::prefill(8, 4, 2).with_d_ffn(8);
        let stages = plan_layer("100000".parse().unwrap(), &dims, &HardwareConfig::edge()).unwrap();
        let q = &stages[0];
        assert_eq!(q.op.id, OpId::QProj);
        assert_eq!(q.elide, [false, false, true]);
        // KProj reads X after QProj inside the same primitive
        assert_eq!(stages[1].elide, [false, true, true]);
        assert_eq!(stages[3].elide, [true, true, false]);
        assert!(stages[2].chain.is_none());
    }

    #[test]
    fn infeasible_chain_names_tensor() {
        let dims = ModelDims::prefill(768, 1024, 12);
        let hw = HardwareConfig { s2_bytes: 1 << 20, ..HardwareConfig::edge() };
        match plan_layer(FusionCode::ALL, &dims, &hw) {
            Err(CostError::Infeasible { chain, tensor, .. }) => {
                assert_eq!(chain, "Op12345");
                assert!(!tensor.is_empty());
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
