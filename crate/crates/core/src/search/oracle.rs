use super::ga::{Individual, OpProblem};
use super::{GaConfig, SearchError};
use crate::mapping::enumerate;
use rayon::prelude::*;

pub const DEFAULT_ORACLE_CAP: u128 = 1_000_000;

/// Evaluates every genome of the canonical domain and returns the optimum
/// under the same ordering the GA uses.
pub fn exhaustive_oracle(problem: &OpProblem, cfg: &GaConfig, cap: u128) -> Result<Individual, SearchError> {
    let genomes = enumerate(&problem.shape(), &problem.hw, &problem.template, cap).map_err(SearchError::SpaceTooLarge)?;
    genomes
        .par_iter()
        .filter_map(|g| problem.individual(*g, cfg))
        .min_by(|a, b| a.fitness.cmp(&b.fitness))
        .ok_or_else(|| SearchError::Capacity(format!("no valid genome for {}", problem.op.id)))
}
