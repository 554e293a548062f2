mod common;

use common::layers::{refetch_free_layer, roomy_edge};
use samt_core::costmodel::evaluate_layer;
use samt_core::fusion::{primitive_footprints, FusionCode};
use samt_core::workload::ModelDims;

fn s3(code: FusionCode, dims: &ModelDims) -> u64 {
    evaluate_layer(code, &refetch_free_layer(dims), dims, &roomy_edge(), false).unwrap().total.acc_s3
}

#[test]
fn each_primitive_removes_its_reduction() {
    for dims in [
        ModelDims::prefill(768, 1024, 1),
        ModelDims::prefill(768, 1024, 12),
        ModelDims::prefill(64, 48, 4).with_d_ffn(96).with_bytes_per_element(2),
    ] {
        let base = s3(FusionCode::NONE, &dims);
        for id in 1..=6u8 {
            let code = FusionCode::from_primitives([id]);
            let reduced = primitive_footprints(id, &dims).unwrap().memory_reduced;
            assert_eq!(s3(code, &dims), base - reduced, "primitive {id} at {dims:?}");
        }
    }
}

#[test]
fn q_projection_primitive_saves_5dl() {
    let dims = ModelDims::prefill(768, 1024, 1);
    assert_eq!(s3(FusionCode::NONE, &dims) - s3("100000".parse().unwrap(), &dims), 5 * 768 * 1024);
}

#[test]
fn combined_codes_are_additive() {
    let dims = ModelDims::prefill(96, 64, 2).with_d_ffn(128);
    let base = s3(FusionCode::NONE, &dims);
    for code in FusionCode::all() {
        let sum: u64 =
            code.enabled().into_iter().map(|id| primitive_footprints(id, &dims).unwrap().memory_reduced).sum();
        assert_eq!(s3(code, &dims), base - sum, "{code}");
    }
}
