use samt_core::costmodel::HardwareConfig;
use samt_core::mapping::AcceleratorTemplate;
use samt_core::search::{exhaustive_oracle, run_ga, GaConfig, OpProblem, DEFAULT_ORACLE_CAP};
use samt_core::workload::{build_layer, ModelDims};

fn gemm_problem(side: u64, pes: u64) -> OpProblem {
    let dims = ModelDims::prefill(side, side, 1).with_d_ffn(side);
    let op = build_layer(&dims).unwrap().remove(0);
    assert_eq!((op.dims.m, op.dims.n, op.dims.k), (side, side, side));
    let hw = HardwareConfig { pe_count: pes, ..HardwareConfig::edge() };
    OpProblem::new(op, hw, AcceleratorTemplate::flexible())
}

#[test]
fn ga_matches_oracle_on_4x4x4() {
    let p = gemm_problem(4, 4);
    let cfg = GaConfig { population_size: 32, generations: 50, ..GaConfig::default() };
    let best = exhaustive_oracle(&p, &cfg, DEFAULT_ORACLE_CAP).unwrap();
    let mut hits = 0;
    for seed in 0..20 {
        let out = run_ga(&p, &cfg, seed).unwrap();
        if out.best.report.latency_cycles == best.report.latency_cycles {
            hits += 1;
        }
        for w in out.trace.windows(2) {
            assert!(w[1].best_latency <= w[0].best_latency);
        }
    }
    assert!(hits >= 18, "{hits}/20 seeds reached the optimum");
}

#[test]
fn oracle_reaches_full_utilization_on_3x3x3() {
    let p = gemm_problem(3, 6);
    let best = exhaustive_oracle(&p, &GaConfig::default(), DEFAULT_ORACLE_CAP).unwrap();
    assert_eq!(best.report.full_tile_utilization, 1.0, "{}", best.genome);
}

mod operator_properties {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use samt_core::costmodel::HardwareConfig;
    use samt_core::mapping::{random_genome, validate, AcceleratorTemplate, GemmShape};
    use samt_core::search::{crossover, mutate, reorder};

    #[test]
    fn operators_keep_genomes_valid() {
        let shape = GemmShape::new(24, 18, 32);
        let hw = HardwareConfig { pe_count: 32, s1_bytes: 64, s2_bytes: 900, ..HardwareConfig::edge() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in AcceleratorTemplate::all_builtin() {
            let ok = |g: &samt_core::mapping::Genome| validate(g, &shape, &hw, &t).is_ok();
            for _ in 0..1000 {
                let a = random_genome(&shape, &hw, &t, &mut rng).unwrap();
                let b = random_genome(&shape, &hw, &t, &mut rng).unwrap();
                let (x, y) = crossover(&a, &b, &shape, &hw, &t, &mut rng).unwrap();
                assert!(ok(&x) && ok(&y));
                assert!(ok(&mutate(&a, &shape, &hw, &t, &mut rng)));
                assert!(ok(&reorder(&a, &t, &mut rng)));
            }
        }
    }
}

mod layer_search {
    use samt_core::costmodel::{evaluate_layer, HardwareConfig};
    use samt_core::fusion::{feasible, FusionCode};
    use samt_core::mapping::AcceleratorTemplate;
    use samt_core::search::{full_search, DataflowMode, GaConfig};
    use samt_core::workload::ModelDims;

    fn cfg(seed: u64) -> GaConfig {
        GaConfig { population_size: 12, generations: 6, seed, ..GaConfig::default() }
    }

    #[test]
    fn pareto_points_are_sound() {
        let dims = ModelDims::prefill(32, 16, 2).with_d_ffn(64);
        let roomy = HardwareConfig { pe_count: 16, ..HardwareConfig::edge() };
        let need = feasible(FusionCode::ALL, &dims, &roomy).unwrap().s2_required;
        let hw = roomy.with_s2(need - 1);
        let t = AcceleratorTemplate::flexible();
        let r = full_search(&dims, &hw, &t, DataflowMode::Flexible, &cfg(2)).unwrap();
        assert!(r.codes.iter().any(|c| !c.feasible), "expected some infeasible codes at this S2");
        for a in &r.pareto {
            assert!(r.pareto.iter().all(|b| !b.dominates(a)));
            let again = evaluate_layer(a.fusion_code, &a.mapping, &dims, &hw, t.forwarding).unwrap();
            assert_eq!(again.total.latency_cycles, a.latency_cycles);
            assert_eq!(again.total.energy_units, a.energy_units);
            assert!(a.s2_bytes_needed <= hw.s2_bytes);
        }
        let best = r.pareto.iter().map(|p| p.latency_cycles).min().unwrap();
        assert!(best <= r.report.total.latency_cycles);
    }

    #[test]
    fn same_seed_same_result() {
        let dims = ModelDims::prefill(32, 16, 2).with_d_ffn(64);
        let hw = HardwareConfig { pe_count: 16, ..HardwareConfig::edge() };
        let t = AcceleratorTemplate::flexible();
        let a = full_search(&dims, &hw, &t, DataflowMode::Fixed, &cfg(5)).unwrap();
        let b = full_search(&dims, &hw, &t, DataflowMode::Fixed, &cfg(5)).unwrap();
        assert_eq!(a, b);
        for w in a.trace.windows(2) {
            assert!(w[1].best_latency as f64 <= w[0].best_latency as f64 * 1.001);
        }
    }
}
