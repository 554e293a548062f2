//! Search domain, construction and repair of genomes.
//!
//! Inter tiles range over divisors of each dimension and intra tiles over the
//! divisors that do not exceed the inter tile, so remainder chunks appear only
//! at the intra level and through partial spatial folds. The cluster counts are
//! canonicalised: never more clusters than inter chunks along the spatial dim,
//! never more PEs per cluster than intra sub-tiles of a full chunk.

use super::{
    validate, AcceleratorTemplate, Dim, GemmShape, Genome, Level, LevelId, LevelStyle,
    MappingError,
};
use crate::costmodel::HardwareConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// All divisors of `n` in ascending order.
pub fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut i = 1;
    while i * i <= n {
        if n.is_multiple_of(i) {
            small.push(i);
            if i * i != n {
                large.push(n / i);
            }
        }
        i += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// Largest divisor of `n` not above `bound` (at least 1).
pub(crate) fn snap_down(n: u64, bound: u64) -> u64 {
    divisors(n).into_iter().rev().find(|&d| d <= bound).unwrap_or(1)
}

fn next_smaller_divisor(n: u64, current: u64) -> u64 {
    divisors(n).into_iter().rev().find(|&d| d < current).unwrap_or(1)
}

/// Size of the valid genome space. `exact` is `None` when it overflows `u128`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingCount {
    pub exact: Option<u128>,
    pub log10: f64,
}

impl MappingCount {
    pub fn exceeds(&self, cap: u128) -> bool {
        match self.exact {
            Some(c) => c > cap,
            None => true,
        }
    }
}

fn chunks(dim: u64, tile: u64) -> u64 {
    dim.div_ceil(tile)
}

/// Largest valid cluster count for inter tiles `t`.
pub(crate) fn max_clusters(
    shape: &GemmShape,
    hw: &HardwareConfig,
    inter_spatial: Dim,
    t: [u64; 3],
    pes_per_cluster: u64,
) -> u64 {
    if inter_spatial == Dim::K {
        return 1;
    }
    let c_s = chunks(shape.get(inter_spatial), t[inter_spatial.index()]);
    c_s.min(hw.pe_count / pes_per_cluster.max(1)).max(1)
}

/// Largest valid flexible cluster size for the given tiles and cluster count.
pub(crate) fn max_cluster_size(hw: &HardwareConfig, intra_spatial: Dim, t: [u64; 3], u: [u64; 3], clusters: u64) -> u64 {
    let i = intra_spatial.index();
    chunks(t[i], u[i]).min(hw.pe_count / clusters.max(1)).max(1)
}

fn s1_of(u: [u64; 3], bpe: u64) -> u64 {
    (u[0] * u[2] + u[2] * u[1] + u[0] * u[1]) * bpe
}

fn s2_of(shape: &GemmShape, s: Dim, t: [u64; 3], x: u64) -> u64 {
    let mut span = t;
    span[s.index()] = (t[s.index()] * x).min(shape.get(s));
    s1_of(span, shape.elem_bytes)
}

fn tile_triples(shape: &GemmShape) -> Vec<[u64; 3]> {
    let dm = divisors(shape.m);
    let dn = divisors(shape.n);
    let dk = divisors(shape.k);
    let mut out = Vec::with_capacity(dm.len() * dn.len() * dk.len());
    for &m in &dm {
        for &n in &dn {
            for &k in &dk {
                out.push([m, n, k]);
            }
        }
    }
    out
}

/// Counts valid genomes under the canonical search domain.
pub fn count_mapping_space(
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
) -> MappingCount {
    let fixed_c = template.effective_cluster_size(hw.pe_count);
    let tiles = tile_triples(shape);
    let intra_ok: Vec<[u64; 3]> =
        tiles.iter().copied().filter(|u| s1_of(*u, shape.elem_bytes) <= hw.s1_bytes).collect();

    // The count depends on each level's style only through its spatial dim.
    let mut groups: Vec<(Dim, Dim, u128)> = Vec::new();
    for a in template.styles(LevelId::Inter) {
        for b in template.styles(LevelId::Intra) {
            match groups.iter_mut().find(|g| g.0 == a.spatial && g.1 == b.spatial) {
                Some(g) => g.2 += 1,
                None => groups.push((a.spatial, b.spatial, 1)),
            }
        }
    }

    let mut exact: Option<u128> = Some(0);
    let mut approx = 0f64;
    let mut a_vals: Vec<u64> = Vec::new();
    let mut prefix: Vec<u128> = Vec::new();
    for (s, sp, multiplicity) in groups {
        let mut group_total: u128 = 0;
        for t in &tiles {
            a_vals.clear();
            for u in &intra_ok {
                if u[0] <= t[0] && u[1] <= t[1] && u[2] <= t[2] {
                    a_vals.push(chunks(t[sp.index()], u[sp.index()]));
                }
            }
            if a_vals.is_empty() {
                continue;
            }
            a_vals.sort_unstable();
            prefix.clear();
            prefix.push(0);
            for &a in &a_vals {
                let last = *prefix.last().unwrap();
                prefix.push(last + a as u128);
            }
            let x_max = max_clusters(shape, hw, s, *t, fixed_c.unwrap_or(1));
            for x in 1..=x_max {
                if s2_of(shape, s, *t, x) > hw.s2_bytes {
                    break;
                }
                group_total += match fixed_c {
                    Some(_) => a_vals.len() as u128,
                    None => {
                        let cap = (hw.pe_count / x) as u128;
                        let below = a_vals.partition_point(|&a| (a as u128) <= cap);
                        prefix[below] + cap * (a_vals.len() - below) as u128
                    }
                };
            }
        }
        approx += group_total as f64 * multiplicity as f64;
        exact = exact.and_then(|e| group_total.checked_mul(multiplicity).and_then(|g| e.checked_add(g)));
    }
    let log10 = if approx > 0.0 { approx.log10() } else { f64::NEG_INFINITY };
    MappingCount { exact, log10 }
}

/// Every valid genome of the canonical domain, or the count if above `cap`.
pub fn enumerate(
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    cap: u128,
) -> Result<Vec<Genome>, MappingCount> {
    let count = count_mapping_space(shape, hw, template);
    if count.exceeds(cap) {
        return Err(count);
    }
    let fixed_c = template.effective_cluster_size(hw.pe_count);
    let tiles = tile_triples(shape);
    let mut out = Vec::with_capacity(count.exact.unwrap_or(0) as usize);
    for a in template.styles(LevelId::Inter) {
        for b in template.styles(LevelId::Intra) {
            for t in &tiles {
                let x_max = max_clusters(shape, hw, a.spatial, *t, fixed_c.unwrap_or(1));
                for x in 1..=x_max {
                    if s2_of(shape, a.spatial, *t, x) > hw.s2_bytes {
                        break;
                    }
                    for u in &tiles {
                        if !(u[0] <= t[0] && u[1] <= t[1] && u[2] <= t[2])
                            || s1_of(*u, shape.elem_bytes) > hw.s1_bytes
                        {
                            continue;
                        }
                        let cs: Vec<u64> = match fixed_c {
                            Some(c) => vec![c],
                            None => (1..=max_cluster_size(hw, b.spatial, *t, *u, x)).collect(),
                        };
                        for c in cs {
                            out.push(Genome::new(
                                Level::from_parts(x, a.order, a.spatial, *t),
                                Level::from_parts(c, b.order, b.spatial, *u),
                            ));
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn allowed_style(template: &AcceleratorTemplate, level: LevelId, current: &Level) -> LevelStyle {
    if let Some(s) = template.fixed_style(level) {
        return s;
    }
    if !current.is_well_formed() {
        let spatial = if template.supports_spatial_reduction { Dim::K } else { Dim::N };
        return LevelStyle::new([Dim::M, Dim::N, Dim::K], spatial);
    }
    let mut style = LevelStyle::new(current.order(), current.spatial_dim());
    if style.spatial == Dim::K && !template.supports_spatial_reduction {
        style.spatial = Dim::N;
    }
    style
}

/// Snaps an arbitrary genome into the canonical valid domain, shrinking tiles
/// (largest first) until the scratchpads fit.
pub fn repair(
    genome: &Genome,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
) -> Result<Genome, MappingError> {
    let dims = [shape.m, shape.n, shape.k];
    let a = allowed_style(template, LevelId::Inter, &genome.inter);
    let b = allowed_style(template, LevelId::Intra, &genome.intra);
    let tile_of = |l: &Level, d: Dim| {
        l.directives.iter().find(|x| x.dim == d).map(|x| x.size).unwrap_or(1)
    };
    let mut t = Dim::ALL.map(|d| snap_down(dims[d.index()], tile_of(&genome.inter, d).max(1)));
    let mut u = Dim::ALL.map(|d| snap_down(dims[d.index()], tile_of(&genome.intra, d).max(1).min(t[d.index()])));
    let mut x = genome.inter.cluster.max(1);
    let mut c = genome.intra.cluster.max(1);

    let clamp = |t: [u64; 3], u: &mut [u64; 3], x: &mut u64, c: &mut u64| {
        for i in 0..3 {
            if u[i] > t[i] {
                u[i] = snap_down(dims[i], t[i]);
            }
        }
        *c = match template.effective_cluster_size(hw.pe_count) {
            Some(fixed) => fixed,
            None => (*c).min(max_cluster_size(hw, b.spatial, t, *u, 1)),
        };
        *x = (*x).clamp(1, max_clusters(shape, hw, a.spatial, t, *c));
    };
    clamp(t, &mut u, &mut x, &mut c);

    while s2_of(shape, a.spatial, t, x) > hw.s2_bytes {
        let largest = (0..3).filter(|&i| t[i] > 1).max_by_key(|&i| (t[i], std::cmp::Reverse(i)));
        match largest {
            Some(i) => t[i] = next_smaller_divisor(dims[i], t[i]),
            None if x > 1 => x /= 2,
            None => {
                return Err(MappingError::Capacity(format!(
                    "S2 of {} B cannot hold unit tiles",
                    hw.s2_bytes
                )))
            }
        }
        clamp(t, &mut u, &mut x, &mut c);
    }
    while s1_of(u, shape.elem_bytes) > hw.s1_bytes {
        let largest = (0..3).filter(|&i| u[i] > 1).max_by_key(|&i| (u[i], std::cmp::Reverse(i)));
        match largest {
            Some(i) => u[i] = next_smaller_divisor(dims[i], u[i]),
            None => {
                return Err(MappingError::Capacity(format!(
                    "S1 of {} B cannot hold unit tiles",
                    hw.s1_bytes
                )))
            }
        }
    }
    clamp(t, &mut u, &mut x, &mut c);

    let out = Genome::new(
        Level::from_parts(x, a.order, a.spatial, t),
        Level::from_parts(c, b.order, b.spatial, u),
    );
    validate(&out, shape, hw, template).map_err(MappingError::Invalid)?;
    Ok(out)
}

fn pick<R: Rng + ?Sized>(rng: &mut R, v: &[u64]) -> u64 {
    *v.choose(rng).expect("non-empty domain")
}

/// Uniformly samples each genome slot, then repairs.
pub fn random_genome<R: Rng + ?Sized>(
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
    rng: &mut R,
) -> Result<Genome, MappingError> {
    let a = *template.styles(LevelId::Inter).choose(rng).expect("styles");
    let b = *template.styles(LevelId::Intra).choose(rng).expect("styles");
    let dims = [shape.m, shape.n, shape.k];
    let t = dims.map(|d| pick(rng, &divisors(d)));
    let mut u = [1; 3];
    for i in 0..3 {
        let choices: Vec<u64> = divisors(dims[i]).into_iter().filter(|&d| d <= t[i]).collect();
        u[i] = pick(rng, &choices);
    }
    let c = match template.effective_cluster_size(hw.pe_count) {
        Some(c) => c,
        None => rng.gen_range(1..=max_cluster_size(hw, b.spatial, t, u, 1)),
    };
    let x = rng.gen_range(1..=max_clusters(shape, hw, a.spatial, t, c));
    let c = c.min(hw.pe_count / x).max(1);
    let g = Genome::new(
        Level::from_parts(x, a.order, a.spatial, t),
        Level::from_parts(c, b.order, b.spatial, u),
    );
    repair(&g, shape, hw, template)
}

/// Template instantiation with the largest tiles that fit. Templates that do
/// not fix the dataflow get a random genome drawn from `seed`.
pub fn default_genome(
    template: &AcceleratorTemplate,
    shape: &GemmShape,
    hw: &HardwareConfig,
    seed: u64,
) -> Result<Genome, MappingError> {
    let (Some(a), Some(b), Some(c)) =
        (template.inter, template.intra, template.effective_cluster_size(hw.pe_count))
    else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        return random_genome(shape, hw, template, &mut rng);
    };
    let dims = [shape.m, shape.n, shape.k];
    let mut t = dims;
    let si = a.spatial.index();
    let mut x = 1;
    if a.spatial != Dim::K {
        let target = (hw.pe_count / c).max(1);
        t[si] = divisors(dims[si]).into_iter().find(|&d| chunks(dims[si], d) <= target).unwrap_or(dims[si]);
        x = chunks(dims[si], t[si]);
    }
    let mut u = t;
    let ui = b.spatial.index();
    u[ui] = divisors(dims[ui])
        .into_iter()
        .find(|&d| d <= t[ui] && chunks(t[ui], d) <= c)
        .unwrap_or(t[ui]);
    let g = Genome::new(Level::from_parts(x, a.order, a.spatial, t), Level::from_parts(c, b.order, b.spatial, u));
    repair(&g, shape, hw, template)
}

#[cfg(test)]
/// Whether `g` lies in the canonical search domain (divisor tiles, canonical
/// cluster counts) in addition to being valid.
pub(crate) fn in_domain(g: &Genome, shape: &GemmShape, hw: &HardwareConfig, template: &AcceleratorTemplate) -> bool {
    if validate(g, shape, hw, template).is_err() {
        return false;
    }
    let t = g.inter.tiles();
    let u = g.intra.tiles();
    for d in Dim::ALL {
        let n = shape.get(d);
        if !n.is_multiple_of(t[d.index()]) || !n.is_multiple_of(u[d.index()]) {
            return false;
        }
    }
    let c = g.intra.cluster;
    if g.inter.cluster > max_clusters(shape, hw, g.inter.spatial_dim(), t, c) {
        return false;
    }
    template.cluster_size.is_some() || c <= max_cluster_size(hw, g.intra.spatial_dim(), t, u, 1)
}
