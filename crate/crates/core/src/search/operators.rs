//! Genetic operators. All of them return genomes inside the canonical domain
//! of the template they are given.

use super::SearchError;
use crate::costmodel::HardwareConfig;
use crate::mapping::space::{max_cluster_size, max_clusters};
use crate::mapping::{divisors, repair, validate, AcceleratorTemplate, Dim, GemmShape, Genome, LevelId, MapKind};
use rand::seq::SliceRandom;
use rand::Rng;

const MUTATION_RETRIES: usize = 8;

/// A gene: one tile size or one cluster extent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Tile(LevelId, Dim),
    Cluster(LevelId),
}

impl Slot {
    pub const ALL: [Slot; 8] = [
        Slot::Tile(LevelId::Inter, Dim::M),
        Slot::Tile(LevelId::Inter, Dim::N),
        Slot::Tile(LevelId::Inter, Dim::K),
        Slot::Cluster(LevelId::Inter),
        Slot::Tile(LevelId::Intra, Dim::M),
        Slot::Tile(LevelId::Intra, Dim::N),
        Slot::Tile(LevelId::Intra, Dim::K),
        Slot::Cluster(LevelId::Intra),
    ];

    pub fn get(self, g: &Genome) -> u64 {
        match self {
            Slot::Tile(l, d) => g.level(l).tile(d),
            Slot::Cluster(l) => g.level(l).cluster,
        }
    }

    pub fn set(self, g: &mut Genome, v: u64) {
        match self {
            Slot::Tile(l, d) => g.level_mut(l).set_tile(d, v),
            Slot::Cluster(l) => g.level_mut(l).cluster = v,
        }
    }
}

/// Swaps the value of `slot` between two parents, then repairs both.
pub fn crossover_at(
    a: &Genome,
    b: &Genome,
    slot: Slot,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
) -> Result<(Genome, Genome), SearchError> {
    for (name, g) in [("first", a), ("second", b)] {
        if let Err(v) = validate(g, shape, hw, template) {
            return Err(SearchError::Incompatible(format!(
                "{name} parent is not valid for {}x{}x{} under {}: {}",
                shape.m,
                shape.n,
                shape.k,
                template.name(),
                v[0]
            )));
        }
    }
    let (mut x, mut y) = (*a, *b);
    slot.set(&mut x, slot.get(b));
    slot.set(&mut y, slot.get(a));
    Ok((repair(&x, shape, hw, template)?, repair(&y, shape, hw, template)?))
}

/// Crossover at a uniformly chosen slot.
pub fn crossover<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    rng: &mut R,
) -> Result<(Genome, Genome), SearchError> {
    let slot = *Slot::ALL.choose(rng).expect("slots");
    crossover_at(a, b, slot, shape, hw, template)
}

fn spatial_choices(template: &AcceleratorTemplate) -> Vec<Dim> {
    Dim::ALL.into_iter().filter(|&d| d != Dim::K || template.supports_spatial_reduction).collect()
}

fn resample<R: Rng + ?Sized>(
    g: &mut Genome,
    slot: Slot,
    shape: &GemmShape,
    hw: &HardwareConfig,
    rng: &mut R,
) {
    let t = g.inter.tiles();
    let u = g.intra.tiles();
    let v = match slot {
        Slot::Tile(LevelId::Inter, d) => *divisors(shape.get(d)).choose(rng).expect("divisors"),
        Slot::Tile(LevelId::Intra, d) => {
            let bound = t[d.index()];
            let ds: Vec<u64> = divisors(shape.get(d)).into_iter().filter(|&x| x <= bound).collect();
            *ds.choose(rng).expect("divisor 1")
        }
        Slot::Cluster(LevelId::Inter) => {
            rng.gen_range(1..=max_clusters(shape, hw, g.inter.spatial_dim(), t, g.intra.cluster))
        }
        Slot::Cluster(LevelId::Intra) => {
            rng.gen_range(1..=max_cluster_size(hw, g.intra.spatial_dim(), t, u, g.inter.cluster))
        }
    };
    slot.set(g, v);
}

/// Resamples one gene and, where the template leaves it open, possibly the
/// spatial dim of one level. Returns the input if no valid mutant turns up.
pub fn mutate<R: Rng + ?Sized>(
    genome: &Genome,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    rng: &mut R,
) -> Genome {
    let free_levels: Vec<LevelId> =
        [LevelId::Inter, LevelId::Intra].into_iter().filter(|&l| template.fixed_style(l).is_none()).collect();
    let slots: Vec<Slot> = Slot::ALL
        .into_iter()
        .filter(|s| *s != Slot::Cluster(LevelId::Intra) || template.cluster_size.is_none())
        .collect();
    for _ in 0..MUTATION_RETRIES {
        let mut m = *genome;
        if !free_levels.is_empty() && rng.gen_bool(0.5) {
            let level = *free_levels.choose(rng).expect("level");
            let dim = *spatial_choices(template).choose(rng).expect("dims");
            m.level_mut(level).set_spatial(dim);
        }
        let slot = *slots.choose(rng).expect("slots");
        resample(&mut m, slot, shape, hw, rng);
        if let Ok(out) = repair(&m, shape, hw, template) {
            return out;
        }
    }
    *genome
}

/// Swaps the two temporal directives of one level whose order the template
/// leaves free, keeping their tile sizes.
pub fn reorder<R: Rng + ?Sized>(genome: &Genome, template: &AcceleratorTemplate, rng: &mut R) -> Genome {
    let free: Vec<LevelId> =
        [LevelId::Inter, LevelId::Intra].into_iter().filter(|&l| template.fixed_style(l).is_none()).collect();
    let Some(&level) = free.choose(rng) else {
        return *genome;
    };
    let mut out = *genome;
    let l = out.level_mut(level);
    let temporal: Vec<usize> = (0..3).filter(|&i| l.directives[i].kind == MapKind::Temporal).collect();
    if let [i, j] = temporal[..] {
        l.directives.swap(i, j);
    }
    out
}
