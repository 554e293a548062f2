use super::operators::{crossover, mutate, reorder};
use super::{pes_used, Fitness, GaConfig, SearchError};
use crate::costmodel::{evaluate_gemm_unchecked, CostReport, EvalOptions, HardwareConfig};
use crate::mapping::{default_genome, random_genome, validate, AcceleratorTemplate, GemmShape, Genome};
use crate::workload::BaseOp;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

/// One GEMM operator searched in isolation, with the S2 budget and elided
/// operands of its stage.
#[derive(Debug, Clone)]
pub struct OpProblem {
    pub op: BaseOp,
    pub hw: HardwareConfig,
    pub template: AcceleratorTemplate,
    pub opts: EvalOptions,
}

impl OpProblem {
    pub fn new(op: BaseOp, hw: HardwareConfig, template: AcceleratorTemplate) -> Self {
        let opts = EvalOptions { forwarding: template.forwarding, ..EvalOptions::default() };
        Self { op, hw, template, opts }
    }

    pub fn shape(&self) -> GemmShape {
        GemmShape::from(&self.op)
    }

    /// Cost of a genome, or `None` if it breaks the template or capacities.
    pub fn evaluate(&self, g: &Genome) -> Option<CostReport> {
        validate(g, &self.shape(), &self.hw, &self.template).ok()?;
        Some(evaluate_gemm_unchecked(g, &self.op, &self.hw, &self.opts))
    }

    pub fn individual(&self, g: Genome, cfg: &GaConfig) -> Option<Individual> {
        let report = self.evaluate(&g)?;
        let fitness = Fitness::new(cfg, &report, pes_used(&g), g.to_string());
        Some(Individual { genome: g, report, fitness })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub report: CostReport,
    pub fitness: Fitness,
}

/// Best-so-far after a generation; generation 0 is the initial population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub generation: usize,
    pub best_latency: u64,
    pub best_energy: f64,
}

#[derive(Debug, Clone)]
pub struct GaOutcome {
    pub best: Individual,
    pub trace: Vec<TraceRow>,
    /// Every population, when `GaConfig::record_history` is set.
    pub history: Vec<Vec<Genome>>,
}

fn row(generation: usize, best: &Individual) -> TraceRow {
    TraceRow { generation, best_latency: best.report.latency_cycles, best_energy: best.report.energy_units }
}

/// Evaluates genomes in parallel, reusing earlier results. Output order
/// follows input order, so the search does not depend on thread timing.
fn evaluate_all(
    problem: &OpProblem,
    cfg: &GaConfig,
    genomes: Vec<Genome>,
    cache: &mut HashMap<Genome, Option<Individual>>,
) -> Vec<Individual> {
    let fresh: Vec<Genome> = {
        let mut seen = HashSet::new();
        genomes.iter().filter(|g| !cache.contains_key(*g) && seen.insert(**g)).copied().collect()
    };
    let done: Vec<Option<Individual>> = fresh.par_iter().map(|g| problem.individual(*g, cfg)).collect();
    cache.extend(fresh.into_iter().zip(done));
    genomes.iter().filter_map(|g| cache[g].clone()).collect()
}

/// Genetic search for one operator.
pub fn run_ga(problem: &OpProblem, cfg: &GaConfig, seed: u64) -> Result<GaOutcome, SearchError> {
    cfg.validate()?;
    let shape = problem.shape();
    let (hw, template) = (&problem.hw, &problem.template);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cache = HashMap::new();

    let mut init = vec![default_genome(template, &shape, hw, seed)?];
    while init.len() < cfg.population_size {
        init.push(random_genome(&shape, hw, template, &mut rng)?);
    }
    let mut parents = evaluate_all(problem, cfg, init, &mut cache);
    if parents.is_empty() {
        return Err(SearchError::Capacity(format!("no valid genome for {}", problem.op.id)));
    }
    parents.sort_by(|a, b| a.fitness.cmp(&b.fitness));
    let mut best = parents[0].clone();
    let mut trace = vec![row(0, &best)];
    let mut history = Vec::new();
    if cfg.record_history {
        history.push(parents.iter().map(|i| i.genome).collect());
    }

    for generation in 1..=cfg.generations {
        let threshold = parents[(cfg.fitness_threshold * (parents.len() - 1) as f64).floor() as usize].fitness.clone();
        let mut children = Vec::with_capacity(cfg.population_size);
        while children.len() < cfg.population_size {
            let a = &parents[rng.gen_range(0..parents.len())].genome;
            let b = &parents[rng.gen_range(0..parents.len())].genome;
            let (mut x, mut y) = if rng.gen_bool(cfg.crossover_rate) {
                crossover(a, b, &shape, hw, template, &mut rng)?
            } else {
                (*a, *b)
            };
            for child in [&mut x, &mut y] {
                if rng.gen_bool(cfg.mutation_rate) {
                    *child = mutate(child, &shape, hw, template, &mut rng);
                }
                if rng.gen_bool(cfg.reorder_rate) {
                    *child = reorder(child, template, &mut rng);
                }
            }
            children.push(x);
            children.push(y);
        }
        children.truncate(cfg.population_size);
        let children = evaluate_all(problem, cfg, children, &mut cache);

        // Elites survive, children enter only if fitter than the threshold
        // parent, and the best remaining parents fill any free places.
        let mut next: Vec<Individual> = parents[..cfg.elites().min(parents.len())].to_vec();
        next.extend(children.into_iter().filter(|c| c.fitness < threshold));
        next.extend(parents.iter().cloned());
        next.sort_by(|a, b| a.fitness.cmp(&b.fitness));
        let mut seen = HashSet::new();
        next.retain(|i| seen.insert(i.genome));
        next.truncate(cfg.population_size);
        parents = next;

        if parents[0].fitness < best.fitness {
            best = parents[0].clone();
        }
        trace.push(row(generation, &best));
        if cfg.record_history {
            history.push(parents.iter().map(|i| i.genome).collect());
        }
    }
    Ok(GaOutcome { best, trace, history })
}
