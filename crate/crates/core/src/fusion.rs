//! Operator fusion explorer.
//!
//! Six fusion primitives merge adjacent base operators. A 6-bit [`FusionCode`]
//! enables a subset of them; enabled primitives that share a base operator
//! merge into one [`FusedChain`]. Footprints are derived from the layer DAG, so
//! they follow the workload's head count and decode mode.

use crate::costmodel::HardwareConfig;
use crate::workload::{build_layer, BaseOp, ModelDims, OpId, Tensor, TensorRole, WorkloadError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("unknown fusion primitive id {0} (expected 1..=6)")]
    UnknownPrimitive(u8),
    #[error("invalid fusion code {0:?}: expected six characters of '0'/'1'")]
    BadCode(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionPrimitive {
    pub id: u8,
    pub merged_base_ops: &'static [OpId],
}

pub const PRIMITIVES: [FusionPrimitive; 6] = [
    FusionPrimitive { id: 1, merged_base_ops: &[OpId::QProj, OpId::KProj, OpId::AttnScore] },
    FusionPrimitive { id: 2, merged_base_ops: &[OpId::AttnScore, OpId::Softmax] },
    FusionPrimitive { id: 3, merged_base_ops: &[OpId::Softmax, OpId::AttnOut] },
    FusionPrimitive { id: 4, merged_base_ops: &[OpId::VProj, OpId::AttnOut] },
    FusionPrimitive { id: 5, merged_base_ops: &[OpId::AttnOut, OpId::OutProj] },
    FusionPrimitive { id: 6, merged_base_ops: &[OpId::Ffn1, OpId::Ffn2] },
];

pub fn primitive(id: u8) -> Result<&'static FusionPrimitive, FusionError> {
    PRIMITIVES
        .iter()
        .find(|p| p.id == id)
        .ok_or(FusionError::UnknownPrimitive(id))
}

/// Memory footprints (bytes) of one primitive, fused and unfused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprints {
    pub memory_fused: u64,
    pub input_fused: u64,
    pub output_fused: u64,
    pub memory_original: u64,
    pub input_original: u64,
    pub output_original: u64,
    pub memory_reduced: u64,
}

pub fn primitive_footprints(id: u8, dims: &ModelDims) -> Result<Footprints, FusionError> {
    let prim = primitive(id)?;
    let layer = build_layer(dims)?;
    let ops: Vec<&BaseOp> = layer
        .iter()
        .filter(|o| prim.merged_base_ops.contains(&o.id))
        .collect();
    let bpe = dims.bytes_per_element;
    let input_original = ops
        .iter()
        .flat_map(|o| o.inputs.iter())
        .map(|t| t.footprint(bpe))
        .sum();
    let output_original = ops.iter().map(|o| o.output.footprint(bpe)).sum();
    let boundary = chain_boundary(&ops, dims);
    let input_fused = boundary.external_inputs.iter().map(|t| t.footprint(bpe)).sum();
    let output_fused = boundary.external_outputs.iter().map(|t| t.footprint(bpe)).sum();
    let memory_original = input_original + output_original;
    let memory_fused = input_fused + output_fused;
    Ok(Footprints {
        memory_fused,
        input_fused,
        output_fused,
        memory_original,
        input_original,
        output_original,
        memory_reduced: memory_original - memory_fused,
    })
}

/// Six-bit fusion scheme; the leftmost character enables primitive 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FusionCode(u8);

impl FusionCode {
    pub const NONE: FusionCode = FusionCode(0);
    pub const ALL: FusionCode = FusionCode(0b11_1111);

    pub fn from_bits(bits: u8) -> Option<FusionCode> {
        (bits < 64).then_some(FusionCode(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn enables(self, primitive_id: u8) -> bool {
        (1..=6).contains(&primitive_id) && (self.0 >> (6 - primitive_id)) & 1 == 1
    }

    pub fn enabled(self) -> Vec<u8> {
        (1..=6).filter(|&id| self.enables(id)).collect()
    }

    pub fn from_primitives(ids: impl IntoIterator<Item = u8>) -> FusionCode {
        FusionCode(
            ids.into_iter()
                .filter(|id| (1..=6).contains(id))
                .fold(0, |acc, id| acc | 1 << (6 - id)),
        )
    }

    /// Every code in ascending binary order.
    pub fn all() -> impl Iterator<Item = FusionCode> {
        (0u8..64).map(FusionCode)
    }

    pub fn is_superset_of(self, other: FusionCode) -> bool {
        self.0 & other.0 == other.0
    }
}

impl fmt::Display for FusionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:06b}", self.0)
    }
}

impl FromStr for FusionCode {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 6 || !s.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(FusionError::BadCode(s.to_string()));
        }
        Ok(FusionCode(u8::from_str_radix(s, 2).expect("checked binary")))
    }
}

impl Serialize for FusionCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FusionCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Structural part of a decoded chain: which primitives and base ops it covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainShape {
    pub primitives: Vec<u8>,
    pub base_ops: Vec<OpId>,
}

impl ChainShape {
    pub fn name(&self) -> String {
        let ids: String = self.primitives.iter().map(|p| p.to_string()).collect();
        format!("Op{ids}")
    }
}

/// Groups the enabled primitives of `code` into chains (merge iff their base
/// operator sets intersect, transitively).
pub fn chain_shapes(code: FusionCode) -> Vec<ChainShape> {
    let enabled = code.enabled();
    let mut groups: Vec<Vec<u8>> = Vec::new();
    for id in enabled {
        let ops = PRIMITIVES[id as usize - 1].merged_base_ops;
        let (touching, rest): (Vec<_>, Vec<_>) = groups.into_iter().partition(|g| {
            g.iter()
                .any(|&other| PRIMITIVES[other as usize - 1].merged_base_ops.iter().any(|o| ops.contains(o)))
        });
        let mut merged: Vec<u8> = touching.into_iter().flatten().collect();
        merged.push(id);
        merged.sort_unstable();
        groups = rest;
        groups.push(merged);
    }
    groups.sort();
    groups
        .into_iter()
        .map(|primitives| {
            let mut base_ops: Vec<OpId> = primitives
                .iter()
                .flat_map(|&p| PRIMITIVES[p as usize - 1].merged_base_ops.iter().copied())
                .collect();
            base_ops.sort();
            base_ops.dedup();
            ChainShape { primitives, base_ops }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedChain {
    pub name: String,
    pub primitives: Vec<u8>,
    pub base_ops: Vec<OpId>,
    pub external_inputs: Vec<Tensor>,
    pub external_outputs: Vec<Tensor>,
    pub internal_tensors: Vec<Tensor>,
    /// Bytes of S2 needed to run the chain without spilling internal tensors.
    pub s2_working_set: u64,
}

impl FusedChain {
    pub fn is_internal(&self, role: TensorRole) -> bool {
        self.internal_tensors.iter().any(|t| t.role == role)
    }

    /// Bytes held in S2 for the whole chain (internal tensors only).
    pub fn internal_bytes(&self, bytes_per_element: u64) -> u64 {
        self.internal_tensors
            .iter()
            .map(|t| resident_bytes(t, bytes_per_element))
            .sum()
    }

    pub fn contains(&self, op: OpId) -> bool {
        self.base_ops.contains(&op)
    }

    /// Two stages share off-chip reads of a common input only when one enabled
    /// primitive holds both of them.
    pub fn shares_reads(&self, a: OpId, b: OpId) -> bool {
        self.primitives.iter().any(|&p| {
            let ops = PRIMITIVES[p as usize - 1].merged_base_ops;
            ops.contains(&a) && ops.contains(&b)
        })
    }

    /// Inputs of stage `op` whose off-chip read disappears under fusion:
    /// internal tensors, and inputs already read by an earlier stage.
    pub fn elided_inputs(&self, op: &BaseOp, layer: &[BaseOp]) -> Vec<TensorRole> {
        op.inputs
            .iter()
            .filter(|t| {
                self.is_internal(t.role)
                    || layer.iter().any(|prev| {
                        prev.id < op.id
                            && self.contains(prev.id)
                            && prev.inputs.iter().any(|p| p.role == t.role)
                            && self.shares_reads(prev.id, op.id)
                    })
            })
            .map(|t| t.role)
            .collect()
    }

    /// Whether the output of stage `op` never leaves the chip.
    pub fn elides_output(&self, op: &BaseOp) -> bool {
        self.is_internal(op.output.role)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedLayer {
    pub code: FusionCode,
    pub chains: Vec<FusedChain>,
    pub residual: Vec<OpId>,
}

impl DecodedLayer {
    pub fn chain_of(&self, op: OpId) -> Option<&FusedChain> {
        self.chains.iter().find(|c| c.contains(op))
    }

    /// Re-encodes the chain set into the code it came from.
    pub fn encode(&self) -> FusionCode {
        encode(&self.chains)
    }
}

pub fn encode(chains: &[FusedChain]) -> FusionCode {
    FusionCode::from_primitives(chains.iter().flat_map(|c| c.primitives.iter().copied()))
}

struct Boundary {
    external_inputs: Vec<Tensor>,
    external_outputs: Vec<Tensor>,
    internal: Vec<Tensor>,
}

fn chain_boundary(ops: &[&BaseOp], dims: &ModelDims) -> Boundary {
    let produced = |role: TensorRole| ops.iter().any(|o| o.output.role == role);
    let mut external_inputs: Vec<Tensor> = Vec::new();
    let mut internal: Vec<Tensor> = Vec::new();
    let mut external_outputs: Vec<Tensor> = Vec::new();
    for op in ops {
        for t in &op.inputs {
            let is_internal = produced(t.role) && !t.role.persists(dims.mode);
            if is_internal {
                if !internal.iter().any(|i| i.role == t.role) {
                    // A tensor is streamed head by head only when both its
                    // producer and this consumer are per-head.
                    let producer = ops.iter().find(|o| o.output.role == t.role).expect("produced");
                    let view = if producer.output.is_per_head() { *t } else { producer.output };
                    internal.push(view);
                }
            } else if !external_inputs.iter().any(|i| i.role == t.role) {
                external_inputs.push(*t);
            }
        }
    }
    for op in ops {
        if !internal.iter().any(|i| i.role == op.output.role) {
            external_outputs.push(op.output);
        }
    }
    Boundary { external_inputs, external_outputs, internal }
}

/// Per-head tensors stream one head at a time; everything else is resident whole.
fn resident_bytes(t: &Tensor, bpe: u64) -> u64 {
    t.rows * t.cols * bpe
}

/// One row or column panel, whichever is smaller.
fn panel_bytes(t: &Tensor, bpe: u64) -> u64 {
    t.rows.min(t.cols) * bpe
}

fn build_chain(shape: ChainShape, layer: &[BaseOp], dims: &ModelDims) -> FusedChain {
    let ops: Vec<&BaseOp> = layer.iter().filter(|o| shape.base_ops.contains(&o.id)).collect();
    let b = chain_boundary(&ops, dims);
    let bpe = dims.bytes_per_element;
    let s2_working_set = b.internal.iter().map(|t| resident_bytes(t, bpe)).sum::<u64>()
        + b.external_inputs
            .iter()
            .chain(b.external_outputs.iter())
            .map(|t| panel_bytes(t, bpe))
            .sum::<u64>();
    FusedChain {
        name: shape.name(),
        primitives: shape.primitives,
        base_ops: shape.base_ops,
        external_inputs: b.external_inputs,
        external_outputs: b.external_outputs,
        internal_tensors: b.internal,
        s2_working_set,
    }
}

pub fn decode(code: FusionCode, dims: &ModelDims) -> Result<DecodedLayer, FusionError> {
    let layer = build_layer(dims)?;
    let chains: Vec<FusedChain> = chain_shapes(code)
        .into_iter()
        .map(|s| build_chain(s, &layer, dims))
        .collect();
    let residual = OpId::ALL
        .into_iter()
        .filter(|op| !chains.iter().any(|c| c.contains(*op)))
        .collect();
    Ok(DecodedLayer { code, chains, residual })
}

/// Sum of the enabled primitives' memory reductions, in bytes.
pub fn chain_memory_reduced(code: FusionCode, dims: &ModelDims) -> Result<u64, FusionError> {
    code.enabled()
        .into_iter()
        .map(|id| primitive_footprints(id, dims).map(|f| f.memory_reduced))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    pub limiting_chain: Option<String>,
    /// Largest chain working set under this code (0 when nothing is fused).
    pub s2_required: u64,
}

pub fn feasible(code: FusionCode, dims: &ModelDims, hw: &HardwareConfig) -> Result<Feasibility, FusionError> {
    let decoded = decode(code, dims)?;
    Ok(feasibility_of(&decoded, hw.s2_bytes))
}

pub fn feasibility_of(decoded: &DecodedLayer, s2_bytes: u64) -> Feasibility {
    let limiting = decoded.chains.iter().find(|c| c.s2_working_set > s2_bytes);
    Feasibility {
        feasible: limiting.is_none(),
        limiting_chain: limiting.map(|c| c.name.clone()),
        s2_required: decoded.chains.iter().map(|c| c.s2_working_set).max().unwrap_or(0),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionRow {
    pub code: FusionCode,
    pub chains: Vec<String>,
    pub memory_reduced: u64,
    pub s2_required: u64,
    pub feasible: bool,
}

/// All 64 codes in ascending binary order.
pub fn enumerate_codes(dims: &ModelDims, hw: &HardwareConfig) -> Result<Vec<FusionRow>, FusionError> {
    FusionCode::all()
        .map(|code| {
            let decoded = decode(code, dims)?;
            let f = feasibility_of(&decoded, hw.s2_bytes);
            Ok(FusionRow {
                code,
                chains: decoded.chains.iter().map(|c| c.name.clone()).collect(),
                memory_reduced: chain_memory_reduced(code, dims)?,
                s2_required: f.s2_required,
                feasible: f.feasible,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpt2() -> ModelDims {
        ModelDims::prefill(768, 1024, 12)
    }

    fn hw_with_s2(s2: u64) -> HardwareConfig {
        HardwareConfig { s2_bytes: s2, ..HardwareConfig::edge() }
    }

    fn names(code: &str) -> Vec<String> {
        chain_shapes(code.parse().unwrap()).iter().map(|c| c.name()).collect()
    }

    #[test]
    fn code_parsing() {
        assert_eq!("110110".parse::<FusionCode>().unwrap().enabled(), vec![1, 2, 4, 5]);
        assert!("11011".parse::<FusionCode>().is_err());
        assert!("11011x".parse::<FusionCode>().is_err());
        assert_eq!(FusionCode::ALL.to_string(), "111111");
        assert_eq!(FusionCode::from_primitives([1, 6]).to_string(), "100001");
    }

    #[test]
    fn decode_examples() {
        assert_eq!(names("110110"), ["Op12", "Op45"]);
        assert_eq!(names("111111"), ["Op12345", "Op6"]);
        assert!(names("000000").is_empty());
        // 1 and 4 share no base operator.
        assert_eq!(names("100100"), ["Op1", "Op4"]);
        let d = decode(FusionCode::NONE, &gpt2()).unwrap();
        assert_eq!(d.residual.len(), 9);
    }

    #[test]
    fn decode_covers_layer() {
        for code in FusionCode::all() {
            let d = decode(code, &gpt2()).unwrap();
            let mut covered: Vec<OpId> = d.chains.iter().flat_map(|c| c.base_ops.clone()).collect();
            covered.extend(d.residual.iter().copied());
            covered.sort();
            assert_eq!(covered, OpId::ALL, "{code}");
            assert_eq!(d.encode(), code);
        }
    }

    #[test]
    fn op12_internal_tensors() {
        let d = decode("110000".parse().unwrap(), &gpt2()).unwrap();
        let c = &d.chains[0];
        let internal: Vec<_> = c.internal_tensors.iter().map(|t| t.role).collect();
        assert_eq!(internal, [TensorRole::Q, TensorRole::K, TensorRole::A]);
        let ext: Vec<_> = c.external_outputs.iter().map(|t| t.role).collect();
        assert_eq!(ext, [TensorRole::S]);
    }

    #[test]
    fn primitive_footprint_examples() {
        let dims = ModelDims::prefill(768, 1024, 1).with_d_ffn(3072);
        assert_eq!(primitive_footprints(1, &dims).unwrap().memory_reduced, 3_932_160);
        assert_eq!(primitive_footprints(6, &dims).unwrap().memory_reduced, 6_291_456);
        let unit = ModelDims::prefill(1, 1, 1);
        let f = primitive_footprints(2, &unit).unwrap();
        assert_eq!((f.memory_fused, f.memory_original, f.memory_reduced), (3, 5, 2));
        assert_eq!(primitive_footprints(7, &unit), Err(FusionError::UnknownPrimitive(7)));
    }

    #[test]
    fn reduction_sums() {
        let dims = ModelDims::prefill(768, 1024, 1).with_d_ffn(3072);
        assert_eq!(chain_memory_reduced("100000".parse().unwrap(), &dims).unwrap(), 3_932_160);
        assert_eq!(chain_memory_reduced(FusionCode::NONE, &dims).unwrap(), 0);
        // 9dl + 4l^2 + 2 d_ffn l
        assert_eq!(chain_memory_reduced(FusionCode::ALL, &dims).unwrap(), 17_563_648);
    }

    #[test]
    fn chain_reduction_matches_primitive_sum() {
        let dims = gpt2();
        let layer = build_layer(&dims).unwrap();
        for code in FusionCode::all() {
            let d = decode(code, &dims).unwrap();
            let by_chain: u64 = d
                .chains
                .iter()
                .map(|c| {
                    layer
                        .iter()
                        .filter(|o| c.contains(o.id))
                        .map(|o| {
                            let inputs: u64 = c
                                .elided_inputs(o, &layer)
                                .iter()
                                .map(|r| o.input(*r).unwrap().footprint(1))
                                .sum();
                            let output = if c.elides_output(o) { o.output.footprint(1) } else { 0 };
                            inputs + output
                        })
                        .sum::<u64>()
                })
                .sum();
            assert_eq!(by_chain, chain_memory_reduced(code, &dims).unwrap(), "{code}");
        }
    }

    #[test]
    fn feasibility_limits() {
        let dims = gpt2();
        assert!(feasible(FusionCode::NONE, &dims, &hw_with_s2(0)).unwrap().feasible);
        assert!(feasible(FusionCode::ALL, &dims, &hw_with_s2(1 << 60)).unwrap().feasible);
        let d = decode(FusionCode::ALL, &dims).unwrap();
        let op12345 = d.chains.iter().find(|c| c.name == "Op12345").unwrap();
        let internal = op12345.internal_bytes(1);
        let f = feasible(FusionCode::ALL, &dims, &hw_with_s2(internal - 1)).unwrap();
        assert!(!f.feasible);
        assert_eq!(f.limiting_chain.as_deref(), Some("Op12345"));
    }

    #[test]
    fn enumeration_rows() {
        let rows = enumerate_codes(&gpt2(), &hw_with_s2(0)).unwrap();
        assert_eq!(rows.len(), 64);
        assert!(rows.windows(2).all(|w| w[0].code < w[1].code));
        let feasible: Vec<_> = rows.iter().filter(|r| r.feasible).map(|r| r.code).collect();
        assert_eq!(feasible, [FusionCode::NONE]);
        assert_eq!(rows[0].memory_reduced, 0);

        let mb = 1u64 << 20;
        let small = enumerate_codes(&gpt2(), &hw_with_s2(12 * mb)).unwrap();
        let large = enumerate_codes(&gpt2(), &hw_with_s2(20 * mb)).unwrap();
        for (s, l) in small.iter().zip(&large) {
            assert!(!s.feasible || l.feasible, "{}", s.code);
        }
    }

    #[test]
    fn decode_mode_keeps_kv_cache_external() {
        let d = decode(FusionCode::ALL, &ModelDims::decode(768, 12, 128)).unwrap();
        let c = d.chains.iter().find(|c| c.name == "Op12345").unwrap();
        assert!(!c.is_internal(TensorRole::K));
        assert!(!c.is_internal(TensorRole::V));
        assert!(c.is_internal(TensorRole::Q));
    }
}
