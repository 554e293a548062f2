//! Transformer layer workload: model dimensions, the per-layer operator DAG and
//! FLOP / memory-traffic accounting.
//!
//! Every layer is described by nine base operators (Q/K/V projections, attention
//! score, softmax, attention output, output projection and the two feed-forward
//! GEMMs). LayerNorm and residual adds are not part of the DAG.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("invalid model dimensions: {0}")]
    Dimension(String),
    #[error("arithmetic intensity undefined: scope has zero memory traffic")]
    UndefinedIntensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Prefill,
    Decode,
}

/// Model dimensions for one Transformer layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Embedding size.
    pub d: u64,
    /// Sequence length in tokens.
    pub l: u64,
    pub n_h: u64,
    pub d_ffn: u64,
    #[serde(default = "default_bytes_per_element")]
    pub bytes_per_element: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Cached context length; only meaningful in decode mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kv_len: Option<u64>,
    #[serde(default = "default_softmax_flops")]
    pub softmax_flops_per_element: u64,
    #[serde(default = "default_gelu_flops")]
    pub gelu_flops_per_element: u64,
}

fn default_bytes_per_element() -> u64 {
    1
}
fn default_mode() -> Mode {
    Mode::Prefill
}
fn default_softmax_flops() -> u64 {
    DEFAULT_SOFTMAX_FLOPS
}
fn default_gelu_flops() -> u64 {
    DEFAULT_GELU_FLOPS
}

/// max-subtract, exp, sum, divide, compare.
pub const DEFAULT_SOFTMAX_FLOPS: u64 = 5;
pub const DEFAULT_GELU_FLOPS: u64 = 8;

impl ModelDims {
    /// Prefill-mode dimensions with `d_ffn = 4 d` and one byte per element.
    pub fn prefill(d: u64, l: u64, n_h: u64) -> Self {
        Self {
            d,
            l,
            n_h,
            d_ffn: 4 * d,
            bytes_per_element: 1,
            mode: Mode::Prefill,
            kv_len: None,
            softmax_flops_per_element: DEFAULT_SOFTMAX_FLOPS,
            gelu_flops_per_element: DEFAULT_GELU_FLOPS,
        }
    }

    /// Single-token decode step against `kv_len` cached tokens.
    pub fn decode(d: u64, n_h: u64, kv_len: u64) -> Self {
        Self {
            mode: Mode::Decode,
            kv_len: Some(kv_len),
            ..Self::prefill(d, kv_len.max(1), n_h)
        }
    }

    pub fn with_d_ffn(mut self, d_ffn: u64) -> Self {
        self.d_ffn = d_ffn;
        self
    }

    pub fn with_bytes_per_element(mut self, bytes: u64) -> Self {
        self.bytes_per_element = bytes;
        self
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let err = |msg: &str| Err(WorkloadError::Dimension(msg.to_string()));
        if self.d == 0 {
            return err("d > 0");
        }
        if self.l == 0 {
            return err("l > 0");
        }
        if self.n_h == 0 {
            return err("n_h > 0");
        }
        if self.d_ffn == 0 {
            return err("d_ffn > 0");
        }
        if !self.d.is_multiple_of(self.n_h) {
            return err("d mod n_h == 0");
        }
        if self.bytes_per_element == 0 {
            return err("bytes_per_element >= 1");
        }
        if self.mode == Mode::Decode && self.kv_len.unwrap_or(0) == 0 {
            return err("decode mode requires kv_len >= 1");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> u64 {
        self.d / self.n_h
    }

    /// Query length: `l` in prefill, 1 in decode.
    pub fn query_len(&self) -> u64 {
        match self.mode {
            Mode::Prefill => self.l,
            Mode::Decode => 1,
        }
    }

    /// Key/value length: `l` in prefill, `kv_len` in decode.
    pub fn kv_length(&self) -> u64 {
        match self.mode {
            Mode::Prefill => self.l,
            Mode::Decode => self.kv_len.unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpId {
    QProj,
    KProj,
    VProj,
    AttnScore,
    Softmax,
    AttnOut,
    OutProj,
    Ffn1,
    Ffn2,
}

impl OpId {
    pub const ALL: [OpId; 9] = [
        OpId::QProj,
        OpId::KProj,
        OpId::VProj,
        OpId::AttnScore,
        OpId::Softmax,
        OpId::AttnOut,
        OpId::OutProj,
        OpId::Ffn1,
        OpId::Ffn2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpId::QProj => "QProj",
            OpId::KProj => "KProj",
            OpId::VProj => "VProj",
            OpId::AttnScore => "AttnScore",
            OpId::Softmax => "Softmax",
            OpId::AttnOut => "AttnOut",
            OpId::OutProj => "OutProj",
            OpId::Ffn1 => "FFN1",
            OpId::Ffn2 => "FFN2",
        }
    }

    pub fn from_name(name: &str) -> Option<OpId> {
        OpId::ALL
            .into_iter()
            .find(|op| op.name().eq_ignore_ascii_case(name))
    }

    /// Position in the layer's dependency order.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_gemm(self) -> bool {
        self != OpId::Softmax
    }
}

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Gemm,
    BatchedGemm,
    Elementwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    X,
    WQ,
    WK,
    WV,
    WO,
    Q,
    K,
    V,
    A,
    S,
    O,
    Y,
    A1,
    B1,
    A2,
    B2,
    L1,
    L2,
}

impl TensorRole {
    pub fn name(self) -> &'static str {
        match self {
            TensorRole::X => "X",
            TensorRole::WQ => "W_Q",
            TensorRole::WK => "W_K",
            TensorRole::WV => "W_V",
            TensorRole::WO => "W_O",
            TensorRole::Q => "Q",
            TensorRole::K => "K",
            TensorRole::V => "V",
            TensorRole::A => "A",
            TensorRole::S => "S",
            TensorRole::O => "O",
            TensorRole::Y => "Y",
            TensorRole::A1 => "a1",
            TensorRole::B1 => "b1",
            TensorRole::A2 => "a2",
            TensorRole::B2 => "b2",
            TensorRole::L1 => "L1",
            TensorRole::L2 => "L2",
        }
    }

    /// Tensors that persist beyond the layer step regardless of fusion.
    /// In decode mode K and V are appended to the off-chip KV cache.
    pub fn persists(self, mode: Mode) -> bool {
        mode == Mode::Decode && matches!(self, TensorRole::K | TensorRole::V)
    }
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A tensor as seen by one operator. `batch > 1` marks a per-head view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tensor {
    pub role: TensorRole,
    pub rows: u64,
    pub cols: u64,
    pub batch: u64,
}

impl Tensor {
    fn new(role: TensorRole, rows: u64, cols: u64, batch: u64) -> Self {
        Self { role, rows, cols, batch }
    }

    pub fn elements(&self) -> u64 {
        self.rows * self.cols * self.batch
    }

    pub fn footprint(&self, bytes_per_element: u64) -> u64 {
        self.elements() * bytes_per_element
    }

    pub fn is_per_head(&self) -> bool {
        self.batch > 1
    }
}

/// GEMM extents: `C[M x N] += A[M x K] * B[K x N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmDims {
    pub m: u64,
    pub n: u64,
    pub k: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaseOp {
    pub id: OpId,
    pub kind: OpKind,
    pub dims: GemmDims,
    pub batch: u64,
    /// GEMM operands in (A, B) order; a single input for elementwise ops.
    pub inputs: Vec<Tensor>,
    pub output: Tensor,
    pub flops: u64,
    pub mops: u64,
    /// FLOPs spent in nonlinear functions (softmax, GELU).
    pub nonlinear_flops: u64,
    pub bytes_per_element: u64,
}

impl BaseOp {
    pub fn mac_count(&self) -> u64 {
        match self.kind {
            OpKind::Elementwise => 0,
            _ => self.dims.m * self.dims.n * self.dims.k * self.batch,
        }
    }

    pub fn is_gemm(&self) -> bool {
        self.kind != OpKind::Elementwise
    }

    pub fn input(&self, role: TensorRole) -> Option<&Tensor> {
        self.inputs.iter().find(|t| t.role == role)
    }

    /// Bytes that must cross the off-chip boundary with no reuse.
    pub fn compulsory_bytes(&self) -> u64 {
        self.mops
    }
}

/// Builds the nine base operators of one layer in dependency order.
pub fn build_layer(dims: &ModelDims) -> Result<Vec<BaseOp>, WorkloadError> {
    dims.validate()?;
    let d = dims.d;
    let h = dims.n_h;
    let dh = dims.head_dim();
    let lq = dims.query_len();
    let lkv = dims.kv_length();
    let f = dims.d_ffn;

    use TensorRole as R;
    let t = Tensor::new;
    let gemm = |id, m, n, k, a: Tensor, b: Tensor, c: Tensor| {
        make_op(dims, id, OpKind::Gemm, GemmDims { m, n, k }, 1, vec![a, b], c)
    };
    let bgemm = |id, m, n, k, a: Tensor, b: Tensor, c: Tensor| {
        make_op(dims, id, OpKind::BatchedGemm, GemmDims { m, n, k }, h, vec![a, b], c)
    };

    let x = t(R::X, d, lq, 1);
    Ok(vec![
        gemm(OpId::QProj, d, lq, d, t(R::WQ, d, d, 1), x, t(R::Q, d, lq, 1)),
        gemm(OpId::KProj, d, lq, d, t(R::WK, d, d, 1), x, t(R::K, d, lq, 1)),
        gemm(OpId::VProj, d, lq, d, t(R::WV, d, d, 1), x, t(R::V, d, lq, 1)),
        // K^T is a layout choice, not an operator.
        bgemm(
            OpId::AttnScore,
            lq,
            lkv,
            dh,
            t(R::Q, lq, dh, h),
            t(R::K, dh, lkv, h),
            t(R::A, lq, lkv, h),
        ),
        make_op(
            dims,
            OpId::Softmax,
            OpKind::Elementwise,
            GemmDims { m: lq, n: lkv, k: 1 },
            h,
            vec![t(R::A, lq, lkv, h)],
            t(R::S, lq, lkv, h),
        ),
        bgemm(
            OpId::AttnOut,
            dh,
            lq,
            lkv,
            t(R::V, dh, lkv, h),
            t(R::S, lkv, lq, h),
            t(R::O, dh, lq, h),
        ),
        gemm(OpId::OutProj, d, lq, d, t(R::WO, d, d, 1), t(R::O, d, lq, 1), t(R::Y, d, lq, 1)),
        gemm(OpId::Ffn1, f, lq, d, t(R::A1, f, d, 1), t(R::Y, d, lq, 1), t(R::L1, f, lq, 1)),
        gemm(OpId::Ffn2, d, lq, f, t(R::A2, d, f, 1), t(R::L1, f, lq, 1), t(R::L2, d, lq, 1)),
    ])
}

fn make_op(
    dims: &ModelDims,
    id: OpId,
    kind: OpKind,
    gd: GemmDims,
    batch: u64,
    inputs: Vec<Tensor>,
    output: Tensor,
) -> BaseOp {
    let mut op = BaseOp {
        id,
        kind,
        dims: gd,
        batch,
        inputs,
        output,
        flops: 0,
        mops: 0,
        nonlinear_flops: 0,
        bytes_per_element: dims.bytes_per_element,
    };
    op.nonlinear_flops = match id {
        OpId::Softmax => dims.softmax_flops_per_element * op.output.elements(),
        OpId::Ffn1 => dims.gelu_flops_per_element * op.output.elements(),
        _ => 0,
    };
    let (flops, mops) = op_flops_mops(&op);
    op.flops = flops;
    op.mops = mops;
    op
}

/// FLOPs and compulsory memory traffic (bytes) of one operator.
pub fn op_flops_mops(op: &BaseOp) -> (u64, u64) {
    let bpe = op.bytes_per_element;
    let flops = match op.kind {
        OpKind::Elementwise => op.nonlinear_flops,
        _ => 2 * op.dims.m * op.dims.n * op.dims.k * op.batch + op.nonlinear_flops,
    };
    let mut roles: Vec<TensorRole> = Vec::new();
    let mut input_bytes = 0;
    for t in &op.inputs {
        if !roles.contains(&t.role) {
            roles.push(t.role);
            input_bytes += t.footprint(bpe);
        }
    }
    (flops, input_bytes + op.output.footprint(bpe))
}

/// `sum(flops) / sum(mops)` over a set of operators.
pub fn arithmetic_intensity(ops: &[BaseOp]) -> Result<f64, WorkloadError> {
    let flops: u64 = ops.iter().map(|o| o.flops).sum();
    let mops: u64 = ops.iter().map(|o| o.mops).sum();
    if mops == 0 {
        return Err(WorkloadError::UndefinedIntensity);
    }
    Ok(flops as f64 / mops as f64)
}

/// Fraction of layer memory traffic attributable to the given operators.
pub fn mops_fraction(ops: &[BaseOp], of: &[OpId]) -> f64 {
    let total: u64 = ops.iter().map(|o| o.mops).sum();
    let part: u64 = ops.iter().filter(|o| of.contains(&o.id)).map(|o| o.mops).sum();
    part as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bert(l: u64) -> ModelDims {
        ModelDims::prefill(768, l, 12)
    }

    fn op(ops: &[BaseOp], id: OpId) -> &BaseOp {
        ops.iter().find(|o| o.id == id).unwrap()
    }

    #[test]
    fn bert_base_layer_shapes() {
        let ops = build_layer(&bert(1024)).unwrap();
        assert_eq!(ops.len(), 9);
        let ids: Vec<_> = ops.iter().map(|o| o.id).collect();
        assert_eq!(ids, OpId::ALL);
        let a = op(&ops, OpId::AttnScore);
        assert_eq!(a.dims, GemmDims { m: 1024, n: 1024, k: 64 });
        assert_eq!(a.batch, 12);
        assert_eq!(op(&ops, OpId::AttnOut).dims, GemmDims { m: 64, n: 1024, k: 1024 });
        assert_eq!(op(&ops, OpId::QProj).dims, GemmDims { m: 768, n: 1024, k: 768 });
        assert_eq!(op(&ops, OpId::Ffn1).dims, GemmDims { m: 3072, n: 1024, k: 768 });
        assert_eq!(op(&ops, OpId::Ffn2).dims, GemmDims { m: 768, n: 1024, k: 3072 });
    }

    #[test]
    fn minimal_layer_is_unit_sized() {
        let dims = ModelDims::prefill(1, 1, 1).with_d_ffn(1);
        let ops = build_layer(&dims).unwrap();
        for o in ops.iter().filter(|o| o.is_gemm()) {
            assert_eq!(o.dims, GemmDims { m: 1, n: 1, k: 1 }, "{}", o.id);
            assert_eq!(o.batch, 1);
        }
        assert_eq!(op(&ops, OpId::Softmax).output.elements(), 1);
    }

    #[test]
    fn decode_attention_dims() {
        let ops = build_layer(&ModelDims::decode(768, 12, 128)).unwrap();
        let a = op(&ops, OpId::AttnScore);
        assert_eq!(a.dims, GemmDims { m: 1, n: 128, k: 64 });
        assert_eq!(a.batch, 12);
        assert_eq!(op(&ops, OpId::QProj).dims.n, 1);
    }

    #[test]
    fn invalid_dims_name_the_invariant() {
        let mut dims = bert(128);
        dims.n_h = 5;
        match build_layer(&dims) {
            Err(WorkloadError::Dimension(msg)) => assert!(msg.contains("n_h"), "{msg}"),
            other => panic!("expected dimension error, got {other:?}"),
        }
        let mut dims = bert(128);
        dims.bytes_per_element = 0;
        assert!(build_layer(&dims).is_err());
        let mut dims = ModelDims::decode(64, 1, 4);
        dims.kv_len = None;
        assert!(build_layer(&dims).is_err());
    }

    /// Brute-force count: one multiply and one add per (m, n, k) triple, and
    /// every distinct element touched once.
    fn brute_force_counts(m: u64, n: u64, k: u64) -> (u64, u64) {
        use std::collections::HashSet;
        let mut flops = 0;
        let mut touched = HashSet::new();
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    flops += 2;
                    touched.insert(('a', i, p));
                    touched.insert(('b', p, j));
                    touched.insert(('c', i, j));
                }
            }
        }
        (flops, touched.len() as u64)
    }

    #[test]
    fn gemm_counts_match_brute_force() {
        let dims = ModelDims::prefill(2, 2, 1).with_d_ffn(2);
        let ops = build_layer(&dims).unwrap();
        let q = op(&ops, OpId::QProj);
        assert_eq!(brute_force_counts(2, 2, 2), (16, 12));
        assert_eq!(op_flops_mops(q), (16, 12));

        let unit = build_layer(&ModelDims::prefill(1, 1, 1).with_d_ffn(1)).unwrap();
        assert_eq!(op_flops_mops(op(&unit, OpId::QProj)), (2, 3));
        assert!((arithmetic_intensity(std::slice::from_ref(op(&unit, OpId::QProj))).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_counts() {
        // l^2 = 4 elements, one head.
        let ops = build_layer(&ModelDims::prefill(2, 2, 1)).unwrap();
        let sm = op(&ops, OpId::Softmax);
        assert_eq!(op_flops_mops(sm), (20, 8));
    }

    #[test]
    fn gelu_adds_to_ffn1_only() {
        let dims = ModelDims::prefill(4, 4, 1);
        let ops = build_layer(&dims).unwrap();
        let f1 = op(&ops, OpId::Ffn1);
        assert_eq!(f1.flops, 2 * 16 * 4 * 4 + 8 * 16 * 4);
        let f2 = op(&ops, OpId::Ffn2);
        assert_eq!(f2.flops, 2 * 4 * 4 * 16);
    }

    #[test]
    fn zero_traffic_intensity_is_an_error() {
        assert_eq!(arithmetic_intensity(&[]), Err(WorkloadError::UndefinedIntensity));
    }

    #[test]
    fn intensity_peaks_at_512_for_bert_base() {
        let intensity = |l| arithmetic_intensity(&build_layer(&bert(l)).unwrap()).unwrap();
        assert!(intensity(512) > intensity(4096));
        assert!(intensity(256) < intensity(512));
        assert!(intensity(512) > intensity(1024));
    }

    #[test]
    fn attention_share_of_traffic_grows() {
        let frac = |l| mops_fraction(&build_layer(&bert(l)).unwrap(), &[OpId::AttnScore, OpId::Softmax]);
        assert!(frac(4096) > frac(512));
    }

    #[test]
    fn doubling_element_width_halves_intensity() {
        let a = build_layer(&bert(512)).unwrap();
        let b = build_layer(&bert(512).with_bytes_per_element(2)).unwrap();
        let ia = arithmetic_intensity(&a).unwrap();
        let ib = arithmetic_intensity(&b).unwrap();
        assert_eq!(ia, 2.0 * ib);
    }

    #[test]
    fn dims_serde_defaults() {
        let dims: ModelDims =
            serde_json::from_str(r#"{"d": 768, "l": 1024, "n_h": 12, "d_ffn": 3072}"#).unwrap();
        assert_eq!(dims, ModelDims::prefill(768, 1024, 12));
        let bad = serde_json::from_str::<ModelDims>(r#"{"d": 1, "l": 1, "n_h": 1, "d_ffn": 1, "dff": 2}"#);
        assert!(bad.is_err());
    }
}
