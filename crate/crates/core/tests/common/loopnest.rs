//! Element-level loop-nest simulator used as an oracle for the analytical model.
//!
//! It walks every inter step and every intra step, builds the explicit set of
//! matrix elements each buffer needs, and counts the elements that must move.

#![allow(dead_code)]

use rand::Rng;
use samt_core::costmodel::HardwareConfig;
use samt_core::mapping::{validate, AcceleratorTemplate, Dim, GemmShape, Genome, Level, LevelStyle};
use std::collections::HashSet;
use std::ops::Range;

type Set = HashSet<(u64, u64)>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimCounts {
    pub compute_cycles: u64,
    pub s3: u64,
    pub s2: u64,
    pub s1: u64,
    pub macs: u64,
}

fn elems_a(m: &Range<u64>, k: &Range<u64>, out: &mut Set) {
    for i in m.clone() {
        for j in k.clone() {
            out.insert((i, j));
        }
    }
}

/// Tiles along one dim of `len` elements starting at `base`.
fn tiles(base: u64, len: u64, tile: u64) -> Vec<Range<u64>> {
    (0..len.div_ceil(tile)).map(|i| base + i * tile..base + ((i + 1) * tile).min(len)).collect()
}

/// Iterates a 3-deep loop nest in `order`, calling `f` with the index per dim.
fn nest(order: [Dim; 3], trips: [u64; 3], mut f: impl FnMut([u64; 3])) {
    let t = order.map(|d| trips[d.index()]);
    for a in 0..t[0] {
        for b in 0..t[1] {
            for c in 0..t[2] {
                let mut idx = [0; 3];
                idx[order[0].index()] = a;
                idx[order[1].index()] = b;
                idx[order[2].index()] = c;
                f(idx);
            }
        }
    }
}

/// Ranges per unit (cluster or PE) for one step; `None` marks an idle unit.
fn assign(
    level: &Level,
    pieces: &[Vec<Range<u64>>; 3],
    idx: [u64; 3],
) -> Vec<Option<[Range<u64>; 3]>> {
    let s = level.spatial_dim().index();
    (0..level.cluster)
        .map(|unit| {
            let piece = idx[s] * level.cluster + unit;
            if piece as usize >= pieces[s].len() {
                return None;
            }
            Some(std::array::from_fn(|d| {
                let i = if d == s { piece } else { idx[d] };
                pieces[d][i as usize].clone()
            }))
        })
        .collect()
}

fn trips(level: &Level, pieces: &[Vec<Range<u64>>; 3]) -> [u64; 3] {
    let s = level.spatial_dim().index();
    std::array::from_fn(|d| {
        let n = pieces[d].len() as u64;
        if d == s {
            n.div_ceil(level.cluster)
        } else {
            n
        }
    })
}

struct Buffer {
    held: [Set; 3],
}

impl Buffer {
    fn new() -> Self {
        Self { held: [Set::new(), Set::new(), Set::new()] }
    }
}

/// Swaps in the sets `need`; returns (A/B elements loaded, C evicted, C loaded
/// that were seen before).
fn swap(buf: &mut Buffer, need: [Set; 3], seen_c: &mut Set) -> (u64, u64, u64) {
    let mut loads = 0;
    for (want, held) in need.iter().zip(&buf.held).take(2) {
        loads += want.difference(held).count() as u64;
    }
    let evicted: Vec<_> = buf.held[2].difference(&need[2]).copied().collect();
    for e in &evicted {
        seen_c.insert(*e);
    }
    let reloads = need[2].difference(&buf.held[2]).filter(|e| seen_c.contains(e)).count() as u64;
    buf.held = need;
    (loads, evicted.len() as u64, reloads)
}

fn operand_sets(r: &[Range<u64>; 3]) -> [Set; 3] {
    let (m, n, k) = (&r[0], &r[1], &r[2]);
    let mut a = Set::new();
    let mut b = Set::new();
    let mut c = Set::new();
    elems_a(m, k, &mut a);
    elems_a(k, n, &mut b);
    elems_a(m, n, &mut c);
    [a, b, c]
}

fn union(sets: impl Iterator<Item = [Set; 3]>) -> [Set; 3] {
    let mut out = [Set::new(), Set::new(), Set::new()];
    for s in sets {
        for (o, x) in out.iter_mut().zip(s) {
            o.extend(x);
        }
    }
    out
}

pub fn simulate(g: &Genome, shape: &GemmShape, forwarding: bool) -> SimCounts {
    let dims = [shape.m, shape.n, shape.k];
    let inter_pieces: [Vec<Range<u64>>; 3] = std::array::from_fn(|d| tiles(0, dims[d], g.inter.tile(Dim::ALL[d])));
    let mut out = SimCounts::default();
    let mut s2_buf = Buffer::new();
    let mut s3_seen = Set::new();
    let mut s3_traffic = 0;

    nest(g.inter.order(), trips(&g.inter, &inter_pieces), |idx| {
        let clusters = assign(&g.inter, &inter_pieces, idx);
        let need = union(clusters.iter().flatten().map(operand_sets));
        let (loads, evicted, reloads) = swap(&mut s2_buf, need, &mut s3_seen);
        s3_traffic += loads + evicted + reloads;

        let mut slowest = 0;
        for chunk in clusters.iter().flatten() {
            let pieces: [Vec<Range<u64>>; 3] = std::array::from_fn(|d| {
                tiles(chunk[d].start, chunk[d].end - chunk[d].start, g.intra.tile(Dim::ALL[d]))
            });
            let mut cluster_buf = Buffer::new();
            let mut seen = Set::new();
            let mut pes: Vec<Buffer> = (0..g.intra.cluster).map(|_| Buffer::new()).collect();
            let mut cycles = 0;
            let mut fills = [0u64; 2];
            let mut union_loads = [0u64; 2];
            nest(g.intra.order(), trips(&g.intra, &pieces), |j| {
                let units = assign(&g.intra, &pieces, j);
                let need = union(units.iter().flatten().map(operand_sets));
                for t in 0..2 {
                    union_loads[t] += need[t].difference(&cluster_buf.held[t]).count() as u64;
                }
                let (loads, writes, reloads) = swap(&mut cluster_buf, need, &mut seen);
                out.s2 += loads + writes + reloads;
                out.s1 += reloads;
                let mut step = 0;
                for (p, unit) in units.iter().enumerate() {
                    let Some(r) = unit else { continue };
                    let macs: u64 = r.iter().map(|x| x.end - x.start).product();
                    step = step.max(macs);
                    out.macs += macs;
                    out.s1 += 3 * macs;
                    let mut ignore = Set::new();
                    let need = operand_sets(r);
                    for t in 0..2 {
                        fills[t] += need[t].difference(&pes[p].held[t]).count() as u64;
                    }
                    let (l, drained, _) = swap(&mut pes[p], need, &mut ignore);
                    out.s1 += l + drained;
                }
                cycles += step;
            });
            // flush partial sums at the end of the inter step
            out.s2 += cluster_buf.held[2].len() as u64;
            for pe in &pes {
                out.s1 += pe.held[2].len() as u64;
            }
            if forwarding {
                out.s1 += fills[0].saturating_sub(union_loads[0]) + fills[1].saturating_sub(union_loads[1]);
            }
            slowest = slowest.max(cycles);
        }
        out.compute_cycles += slowest;
    });
    s3_traffic += s2_buf.held[2].len() as u64;
    let e = shape.elem_bytes;
    SimCounts { s3: s3_traffic * e, s2: out.s2 * e, s1: out.s1 * e, ..out }
}

/// Random genome with arbitrary (not only divisor) tiles, valid for `hw`.
pub fn arbitrary_genome<R: Rng>(shape: &GemmShape, hw: &HardwareConfig, rng: &mut R) -> Genome {
    let all = LevelStyle::all();
    loop {
        let a = all[rng.gen_range(0..all.len())];
        let b = all[rng.gen_range(0..all.len())];
        let dims = [shape.m, shape.n, shape.k];
        let t = dims.map(|d| rng.gen_range(1..=d));
        let u = std::array::from_fn(|i| rng.gen_range(1..=t[i]));
        let x = if a.spatial == Dim::K { 1 } else { rng.gen_range(1..=hw.pe_count) };
        let c = rng.gen_range(1..=(hw.pe_count / x).max(1));
        let g = Genome::new(Level::from_parts(x, a.order, a.spatial, t), Level::from_parts(c, b.order, b.spatial, u));
        if validate(&g, shape, hw, &AcceleratorTemplate::flexible()).is_ok() {
            return g;
        }
    }
}
