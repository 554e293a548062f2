use super::ga::{run_ga, GaOutcome, OpProblem, TraceRow};
use super::pareto::{pareto_front, ParetoPoint};
use super::{mix, pes_used, Fitness, GaConfig, SearchError};
use crate::costmodel::{evaluate_layer, plan_layer, CostError, EvalOptions, HardwareConfig, LayerMapping, LayerReport, Stage};
use crate::fusion::{feasible, FusionCode};
use crate::mapping::AcceleratorTemplate;
use crate::workload::{ModelDims, OpId};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Whether operators of a layer share one dataflow or pick their own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataflowMode {
    /// One directive structure for all operators; tile sizes stay per operator.
    Fixed,
    Flexible,
}

/// Outcome of searching one fusion code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeSummary {
    pub code: FusionCode,
    pub feasible: bool,
    pub latency_cycles: Option<u64>,
    pub energy_units: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub code: FusionCode,
    pub template: String,
    pub mode: DataflowMode,
    pub mapping: LayerMapping,
    pub report: LayerReport,
    pub s2_bytes_needed: u64,
    pub pareto: Vec<ParetoPoint>,
    /// Layer cost of the incumbent per generation.
    pub trace: Vec<TraceRow>,
    pub codes: Vec<CodeSummary>,
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct RunKey {
    op: OpId,
    elide: [bool; 3],
    s2_bytes: u64,
    template: AcceleratorTemplate,
}

/// GA runs shared between the fusion codes of one search. Stages with the same
/// operator, elided operands, S2 budget and template need only one run.
#[derive(Default)]
struct SearchCache {
    runs: HashMap<RunKey, GaOutcome>,
}

struct Context<'a> {
    dims: &'a ModelDims,
    hw: &'a HardwareConfig,
    template: &'a AcceleratorTemplate,
    mode: DataflowMode,
    cfg: &'a GaConfig,
}

/// A full layer assignment for one code and dataflow candidate.
struct Candidate {
    mapping: LayerMapping,
    report: LayerReport,
    s2_bytes_needed: u64,
    template: String,
    trace: Vec<TraceRow>,
    fitness: Fitness,
}

impl SearchCache {
    fn run(&mut self, ctx: &Context, stage: &Stage, template: &AcceleratorTemplate) -> Result<&GaOutcome, SearchError> {
        let key = RunKey { op: stage.op.id, elide: stage.elide, s2_bytes: stage.s2_bytes, template: template.clone() };
        if !self.runs.contains_key(&key) {
            let problem = OpProblem {
                op: stage.op.clone(),
                hw: ctx.hw.with_s2(stage.s2_bytes),
                template: template.clone(),
                opts: EvalOptions { elide: stage.elide, forwarding: ctx.template.forwarding },
            };
            // The S2 budget is left out of the seed so that runs differing
            // only in spare capacity follow the same trajectory.
            let elide_bits = stage.elide.iter().fold(0u64, |acc, &b| acc << 1 | b as u64);
            let seed = mix(ctx.cfg.seed ^ mix(stage.op.id.index() as u64 + 1) ^ mix(elide_bits << 8));
            let out = run_ga(&problem, ctx.cfg, seed)?;
            self.runs.insert(key.clone(), out);
        }
        Ok(&self.runs[&key])
    }
}

fn plan(ctx: &Context, code: FusionCode) -> Result<Vec<Stage>, SearchError> {
    plan_layer(code, ctx.dims, ctx.hw).map_err(|e| match e {
        CostError::Infeasible { .. } => SearchError::Infeasible { code, detail: e.to_string() },
        other => other.into(),
    })
}

fn assemble(
    ctx: &Context,
    code: FusionCode,
    stages: &[Stage],
    template: &AcceleratorTemplate,
    cache: &mut SearchCache,
) -> Result<Candidate, SearchError> {
    let mut mapping = LayerMapping::new();
    let mut traces = Vec::new();
    for stage in stages.iter().filter(|s| s.op.is_gemm()) {
        let out = cache.run(ctx, stage, template)?;
        mapping.insert(stage.op.id, out.best.genome);
        traces.push((out.best.report, out.trace.clone()));
    }
    let report = evaluate_layer(code, &mapping, ctx.dims, ctx.hw, ctx.template.forwarding)?;

    // Elementwise stages do not change across generations.
    let fixed_lat = report.total.latency_cycles - traces.iter().map(|(r, _)| r.latency_cycles).sum::<u64>();
    let fixed_energy = report.total.energy_units - traces.iter().map(|(r, _)| r.energy_units).sum::<f64>();
    let trace = (0..=ctx.cfg.generations)
        .map(|g| TraceRow {
            generation: g,
            best_latency: fixed_lat + traces.iter().map(|(_, t)| t[g].best_latency).sum::<u64>(),
            best_energy: fixed_energy + traces.iter().map(|(_, t)| t[g].best_energy).sum::<f64>(),
        })
        .collect();

    let s2_bytes_needed = stages
        .iter()
        .zip(&report.per_op)
        .map(|(s, (_, r))| r.s2_bytes_needed + (ctx.hw.s2_bytes - s.s2_bytes))
        .max()
        .unwrap_or(0);
    let pes = mapping.values().map(pes_used).max().unwrap_or(1);
    let key = format!("{code}|{}", mapping.values().map(|g| g.to_string()).collect::<Vec<_>>().join("|"));
    let fitness = Fitness::new(ctx.cfg, &report.total, pes, key);
    Ok(Candidate { mapping, report, s2_bytes_needed, template: template.name().to_string(), trace, fitness })
}

/// Dataflow candidates for one code: the free search itself, or in fixed mode
/// under a template that leaves the dataflow open, every operator winner's
/// structure imposed on all operators.
fn candidates(
    ctx: &Context,
    code: FusionCode,
    cache: &mut SearchCache,
) -> Result<Vec<Candidate>, SearchError> {
    let stages = plan(ctx, code)?;
    let free = assemble(ctx, code, &stages, ctx.template, cache)?;
    if ctx.mode == DataflowMode::Flexible || !ctx.template.per_operator_dataflow() {
        return Ok(vec![free]);
    }
    let mut pinned: Vec<AcceleratorTemplate> = Vec::new();
    for g in free.mapping.values() {
        let t = AcceleratorTemplate::pinned(g, ctx.template.supports_spatial_reduction);
        if !pinned.contains(&t) {
            pinned.push(t);
        }
    }
    pinned.iter().map(|t| assemble(ctx, code, &stages, t, cache)).collect()
}

fn point(code: FusionCode, c: &Candidate) -> ParetoPoint {
    ParetoPoint {
        latency_cycles: c.report.total.latency_cycles,
        energy_units: c.report.total.energy_units,
        s2_bytes_needed: c.s2_bytes_needed,
        fusion_code: code,
        template: c.template.clone(),
        mapping: c.mapping.clone(),
    }
}

fn search_codes(ctx: &Context, codes: &[FusionCode], skip_infeasible: bool) -> Result<SearchResult, SearchError> {
    ctx.cfg.validate()?;
    ctx.hw.validate().map_err(SearchError::Config)?;
    ctx.template.validate().map_err(SearchError::Config)?;
    let mut cache = SearchCache::default();
    let mut best: Option<(FusionCode, Candidate)> = None;
    let mut points = Vec::new();
    let mut summaries = Vec::new();
    for &code in codes {
        if skip_infeasible && !feasible(code, ctx.dims, ctx.hw)?.feasible {
            summaries.push(CodeSummary { code, feasible: false, latency_cycles: None, energy_units: None });
            continue;
        }
        let found = candidates(ctx, code, &mut cache)?;
        let top = found.into_iter().inspect(|c| points.push(point(code, c))).min_by(|a, b| a.fitness.cmp(&b.fitness));
        let Some(top) = top else { continue };
        summaries.push(CodeSummary {
            code,
            feasible: true,
            latency_cycles: Some(top.report.total.latency_cycles),
            energy_units: Some(top.report.total.energy_units),
        });
        if best.as_ref().is_none_or(|(_, b)| top.fitness < b.fitness) {
            best = Some((code, top));
        }
    }
    let Some((code, top)) = best else {
        return Err(SearchError::Capacity("no fusion code fits the hardware".into()));
    };
    Ok(SearchResult {
        code,
        template: top.template,
        mode: ctx.mode,
        mapping: top.mapping,
        report: top.report,
        s2_bytes_needed: top.s2_bytes_needed,
        pareto: pareto_front(points),
        trace: top.trace,
        codes: summaries,
    })
}

/// Searches genomes for every operator of a layer under one fusion code.
pub fn ga_search(
    dims: &ModelDims,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    mode: DataflowMode,
    code: FusionCode,
    cfg: &GaConfig,
) -> Result<SearchResult, SearchError> {
    let ctx = Context { dims, hw, template, mode, cfg };
    search_codes(&ctx, &[code], false)
}

/// Searches every feasible fusion code and assembles the Pareto front.
pub fn full_search(
    dims: &ModelDims,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    mode: DataflowMode,
    cfg: &GaConfig,
) -> Result<SearchResult, SearchError> {
    let ctx = Context { dims, hw, template, mode, cfg };
    let codes: Vec<FusionCode> = FusionCode::all().collect();
    search_codes(&ctx, &codes, true)
}
