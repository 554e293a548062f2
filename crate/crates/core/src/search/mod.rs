//! Mapping space exploration: a genetic search over genomes for every operator
//! of a layer, for every feasible fusion code, plus an exhaustive oracle and
//! Pareto-front assembly.

mod full;
mod ga;
mod operators;
mod oracle;
mod pareto;

pub use full::{full_search, ga_search, CodeSummary, DataflowMode, SearchResult};
pub use ga::{run_ga, GaOutcome, Individual, OpProblem, TraceRow};
pub use operators::{crossover, crossover_at, mutate, reorder, Slot};
pub use oracle::{exhaustive_oracle, DEFAULT_ORACLE_CAP};
pub use pareto::{pareto_front, ParetoPoint};

use crate::costmodel::{CostError, CostReport};
use crate::fusion::{FusionCode, FusionError};
use crate::mapping::{Genome, MappingCount, MappingError};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("fusion code {code} is infeasible: {detail}")]
    Infeasible { code: FusionCode, detail: String },
    #[error("empty mapping space: {0}")]
    Capacity(String),
    #[error("mapping space has {} genomes (log10 {:.2}), above the oracle cap", .0.exact.map(|c| c.to_string()).unwrap_or_else(|| "too many".into()), .0.log10)]
    SpaceTooLarge(MappingCount),
    #[error("incompatible parents: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
}

impl From<MappingError> for SearchError {
    fn from(e: MappingError) -> Self {
        SearchError::Capacity(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Latency,
    Energy,
    S1Size,
    S2Size,
    Pes,
}

impl Objective {
    pub fn value(self, report: &CostReport, pes_used: u64) -> f64 {
        match self {
            Objective::Latency => report.latency_cycles as f64,
            Objective::Energy => report.energy_units,
            Objective::S1Size => report.s1_bytes_needed as f64,
            Objective::S2Size => report.s2_bytes_needed as f64,
            Objective::Pes => pes_used as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub reorder_rate: f64,
    pub elite_fraction: f64,
    /// Children join the parents only if fitter than this parent quantile.
    pub fitness_threshold: f64,
    pub seed: u64,
    pub objectives: [Objective; 2],
    /// Relative band on the first objective inside which the second decides.
    pub tolerance: f64,
    #[serde(skip)]
    pub record_history: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 100,
            crossover_rate: 0.6,
            mutation_rate: 0.3,
            reorder_rate: 0.1,
            elite_fraction: 0.05,
            fitness_threshold: 0.5,
            seed: 0,
            objectives: [Objective::Latency, Objective::Energy],
            tolerance: 0.001,
            record_history: false,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let rates = [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
            ("reorder_rate", self.reorder_rate),
            ("elite_fraction", self.elite_fraction),
            ("fitness_threshold", self.fitness_threshold),
        ];
        for (name, r) in rates {
            if !(0.0..=1.0).contains(&r) {
                return Err(SearchError::Config(format!("{name} must be in [0, 1], got {r}")));
            }
        }
        if self.population_size < 2 {
            return Err(SearchError::Config("population_size must be >= 2".into()));
        }
        if self.generations < 1 {
            return Err(SearchError::Config("generations must be >= 1".into()));
        }
        if self.objectives[0] == self.objectives[1] {
            return Err(SearchError::Config("objectives must be distinct".into()));
        }
        if !(self.tolerance >= 0.0 && self.tolerance < 1.0) {
            return Err(SearchError::Config("tolerance must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn elites(&self) -> usize {
        ((self.elite_fraction * self.population_size as f64).ceil() as usize).clamp(1, self.population_size)
    }
}

/// Total order on candidates: first objective bucketed by the tolerance band,
/// then the second objective, then the exact first objective, then the
/// serialized genome.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitness {
    bucket: i64,
    second: f64,
    first: f64,
    key: String,
}

impl Fitness {
    pub fn new(cfg: &GaConfig, report: &CostReport, pes_used: u64, key: String) -> Self {
        let first = cfg.objectives[0].value(report, pes_used);
        let second = cfg.objectives[1].value(report, pes_used);
        let bucket = if first <= 0.0 {
            i64::MIN
        } else if cfg.tolerance == 0.0 {
            // exact comparison on the first objective
            first.to_bits() as i64
        } else {
            (first.ln() / cfg.tolerance.ln_1p()).floor() as i64
        };
        Self { bucket, second, first, key }
    }

    pub fn first(&self) -> f64 {
        self.first
    }

    pub fn second(&self) -> f64 {
        self.second
    }
}

impl Eq for Fitness {}

impl Ord for Fitness {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bucket
            .cmp(&other.bucket)
            .then(self.second.total_cmp(&other.second))
            .then(self.first.total_cmp(&other.first))
            .then_with(|| self.key.cmp(&other.key))
    }
}

impl PartialOrd for Fitness {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.first, self.second)
    }
}

/// PEs a genome occupies.
pub fn pes_used(g: &Genome) -> u64 {
    g.inter.cluster * g.intra.cluster
}

/// 64-bit mix used to derive independent seeds.
pub(crate) fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(lat: u64, energy: f64) -> CostReport {
        CostReport { latency_cycles: lat, energy_units: energy, ..CostReport::default() }
    }

    #[test]
    fn tolerance_band_lets_energy_decide() {
        let cfg = GaConfig::default();
        let a = Fitness::new(&cfg, &report(100_000, 5.0), 1, "a".into());
        let b = Fitness::new(&cfg, &report(100_050, 1.0), 1, "b".into());
        let c = Fitness::new(&cfg, &report(120_000, 0.1), 1, "c".into());
        // same 0.1% bucket unless the boundary falls between them
        if a.bucket == b.bucket {
            assert!(b < a);
        }
        assert!(a < c && b < c);
    }

    #[test]
    fn ties_break_on_genome_text() {
        let cfg = GaConfig::default();
        let a = Fitness::new(&cfg, &report(10, 1.0), 1, "a".into());
        let b = Fitness::new(&cfg, &report(10, 1.0), 1, "b".into());
        assert!(a < b);
    }

    #[test]
    fn config_checks() {
        GaConfig::default().validate().unwrap();
        let bad = GaConfig { crossover_rate: 1.5, ..GaConfig::default() };
        assert!(bad.validate().is_err());
        let same = GaConfig { objectives: [Objective::Energy, Objective::Energy], ..GaConfig::default() };
        assert!(same.validate().is_err());
        assert_eq!(GaConfig::default().elites(), 5);
        assert_eq!(GaConfig { population_size: 2, ..GaConfig::default() }.elites(), 1);
    }
}
