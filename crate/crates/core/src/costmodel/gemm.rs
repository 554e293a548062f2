//! Closed-form traffic and cycle counts for one GEMM instance under a genome.
//!
//! Execution model. The inter level walks chunks of `t` elements per dim in
//! its loop order; along its spatial dim, `X` consecutive chunks run at once
//! on different clusters (a fold). Inside every cluster chunk the intra level
//! does the same with sub-tiles of `u` over `C` PEs. Buffers hold exactly the
//! current tile of each operand and refetch when its index changes.
//!
//! * S3 counts off-chip bytes of the union of all clusters' tiles.
//! * S2 counts bytes between S2 and each cluster, multicast within a cluster.
//! * S1 counts per-PE fills and drains, psum reloads, and three accesses per MAC.
//!
//! A partial sum reaching a level for the first time needs no read; later
//! visits reload it. S1 starts empty for every inter step.

use crate::mapping::{Dim, GemmShape, Genome, Operand};

/// Raw counts for a single batch element, in bytes and cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GemmCounts {
    pub compute_cycles: u64,
    pub s3_a_reads: u64,
    pub s3_b_reads: u64,
    pub s3_c_writes: u64,
    pub s3_c_reads: u64,
    pub s2: u64,
    pub s1: u64,
    pub macs: u64,
}

impl GemmCounts {
    pub fn s3(&self) -> u64 {
        self.s3_a_reads + self.s3_b_reads + self.s3_c_writes + self.s3_c_reads
    }
}

/// Product of trips of loops that do not index `op` and sit outside its
/// innermost indexing loop with more than one iteration.
pub(crate) fn refetch(loops: &[(Dim, u64); 3], op: Operand) -> u64 {
    match loops.iter().rposition(|&(d, trip)| op.depends_on(d) && trip > 1) {
        None => 1,
        Some(p) => loops[..p]
            .iter()
            .filter(|(d, _)| !op.depends_on(*d))
            .map(|&(_, trip)| trip)
            .product(),
    }
}

fn footprint(ext: [u64; 3], op: Operand) -> u64 {
    Dim::ALL
        .iter()
        .filter(|d| op.depends_on(**d))
        .map(|d| ext[d.index()])
        .product()
}

/// `(extent, count)` classes of chunks of `tile` over `dim`.
fn classes(dim: u64, tile: u64) -> Vec<(u64, u64)> {
    let mut v = Vec::with_capacity(2);
    if dim / tile > 0 {
        v.push((tile, dim / tile));
    }
    if !dim.is_multiple_of(tile) {
        v.push((dim % tile, 1));
    }
    v
}

struct Intra {
    cycles: u64,
    s2: u64,
    s1: u64,
}

/// Costs of one cluster processing a chunk of extents `e`.
fn intra(g: &Genome, e: [u64; 3], elem: u64, forwarding: bool) -> Intra {
    let level = &g.intra;
    let sp = level.spatial_dim();
    let si = sp.index();
    let c = level.cluster;
    let u = level.tiles();
    let n = e[si].div_ceil(u[si]);
    let folds = n.div_ceil(c);
    let last = e[si] - (n - 1) * u[si];
    let trip = |d: Dim, spatial_trip: u64| if d == sp { spatial_trip } else { e[d.index()].div_ceil(u[d.index()]) };
    let loops = |spatial_trip: u64| level.order().map(|d| (d, trip(d, spatial_trip)));

    let union_loops = loops(folds);
    let r = Operand::ALL.map(|o| refetch(&union_loops, o));
    let union = Operand::ALL.map(|o| footprint(e, o) * r[o.index()]);
    let c_fp = footprint(e, Operand::C);
    let c_reloads = c_fp * (r[2] - 1);
    let s2 = union[0] + union[1] + union[2] + c_reloads;

    // PE classes: (active folds, coverage along the spatial dim, count).
    let in_last = n - (folds - 1) * c;
    let mut pes: Vec<(u64, u64, u64)> = vec![(folds, folds * u[si] - (u[si] - last), 1)];
    if in_last > 1 {
        pes.push((folds, folds * u[si], in_last - 1));
    }
    let short = n.min(c) - in_last;
    if short > 0 && folds > 1 {
        pes.push((folds - 1, (folds - 1) * u[si], short));
    }
    let mut fills = [0u64; 3];
    for &(active, cov, count) in &pes {
        let pl = loops(active);
        let mut ext = e;
        ext[si] = cov;
        for o in Operand::ALL {
            let fp = if o.depends_on(sp) { footprint(ext, o) } else { footprint(e, o) };
            fills[o.index()] += count * fp * refetch(&pl, o);
        }
    }
    let macs = e[0] * e[1] * e[2];
    let mut s1 = fills[0] + fills[1] + fills[2] + c_reloads + 3 * macs;
    if forwarding {
        // one extra hop per PE that receives a multicast tile
        s1 += fills[0].saturating_sub(union[0]) + fills[1].saturating_sub(union[1]);
    }

    let temporal: u64 = Dim::ALL.iter().filter(|&&d| d != sp).map(|d| e[d.index()]).product();
    let last_fold = if in_last >= 2 { u[si] } else { last };
    let cycles = temporal * ((folds - 1) * u[si] + last_fold);

    Intra { cycles, s2: s2 * elem, s1: s1 * elem }
}

/// Counts for one GEMM instance; the genome must be structurally valid with
/// tiles within the operator dims.
pub fn gemm_counts(g: &Genome, shape: &GemmShape, forwarding: bool) -> GemmCounts {
    let dims = [shape.m, shape.n, shape.k];
    let elem = shape.elem_bytes;
    let level = &g.inter;
    let s = level.spatial_dim();
    let si = s.index();
    let x = level.cluster;
    let t = level.tiles();
    let c_s = dims[si].div_ceil(t[si]);
    let folds = c_s.div_ceil(x);

    let loops = level
        .order()
        .map(|d| (d, if d == s { folds } else { dims[d.index()].div_ceil(t[d.index()]) }));
    let r = Operand::ALL.map(|o| refetch(&loops, o));
    let fp = Operand::ALL.map(|o| footprint(dims, o) * elem);

    let cls: Vec<Vec<(u64, u64)>> = Dim::ALL.iter().map(|d| classes(dims[d.index()], t[d.index()])).collect();
    let mut s2 = 0;
    let mut s1 = 0;
    for &(em, cm) in &cls[0] {
        for &(en, cn) in &cls[1] {
            for &(ek, ck) in &cls[2] {
                let ic = intra(g, [em, en, ek], elem, forwarding);
                s2 += cm * cn * ck * ic.s2;
                s1 += cm * cn * ck * ic.s1;
            }
        }
    }

    // Clusters in a fold run in parallel; the slowest one sets the pace.
    let others: Vec<Dim> = Dim::ALL.into_iter().filter(|&d| d != s).collect();
    let mut compute = 0;
    for &(e1, n1) in &cls[others[0].index()] {
        for &(e2, n2) in &cls[others[1].index()] {
            let cyc = |es: u64| {
                let mut e = [0; 3];
                e[others[0].index()] = e1;
                e[others[1].index()] = e2;
                e[si] = es;
                intra(g, e, elem, forwarding).cycles
            };
            let rem = dims[si] % t[si];
            let full = if dims[si] >= t[si] { cyc(t[si]) } else { 0 };
            let in_last = c_s - (folds - 1) * x;
            let last = match (rem > 0, in_last) {
                (false, _) => full,
                (true, 1) => cyc(rem),
                (true, _) => full.max(cyc(rem)),
            };
            compute += n1 * n2 * ((folds - 1) * full + last);
        }
    }

    GemmCounts {
        compute_cycles: compute,
        s3_a_reads: fp[0] * r[0],
        s3_b_reads: fp[1] * r[1],
        s3_c_writes: fp[2] * r[2],
        s3_c_reads: fp[2] * (r[2] - 1),
        s2,
        s1,
        macs: shape.macs(),
    }
}

/// Fraction of PEs busy in a step over full chunks and sub-tiles.
pub fn full_tile_utilization(g: &Genome, shape: &GemmShape, pe_count: u64) -> f64 {
    let s = g.inter.spatial_dim();
    let sp = g.intra.spatial_dim();
    let t = g.inter.tiles();
    let u = g.intra.tiles();
    let c_s = shape.get(s).div_ceil(t[s.index()]);
    let k = t[sp.index()].div_ceil(u[sp.index()]);
    (g.inter.cluster.min(c_s) * g.intra.cluster.min(k)) as f64 / pe_count as f64
}
