//! Data-centric mapping IR.
//!
//! A [`Genome`] describes how one GEMM `C[M x N] += A[M x K] * B[K x N]` is laid
//! out on a clustered PE array. It has two levels: the inter-cluster level
//! splits the problem into chunks distributed over clusters, and the
//! intra-cluster level splits each chunk over the PEs of a cluster. Each level
//! has a cluster count and three directives (one per dimension) listed from the
//! outermost to the innermost loop; exactly one directive per level is a
//! `SpatialMap`.
//!
//! Text form, one line per level (inter first):
//!
//! ```text
//! Cluster(1); TemporalMap(3,3) M; TemporalMap(3,3) N; SpatialMap(3,3) K;
//! Cluster(3); TemporalMap(1,1) M; TemporalMap(1,1) N; SpatialMap(1,1) K;
//! ```
//!
//! At the inter level `Cluster(n)` is the number of clusters used; at the intra
//! level it is the number of PEs per cluster.

pub(crate) mod space;
mod template;
mod validate;

pub use space::{
    count_mapping_space, default_genome, divisors, enumerate, random_genome, repair, MappingCount,
};
pub use template::{AcceleratorTemplate, LevelStyle, TemplateKind};
pub use validate::{footprints, validate, Violation};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MappingError {
    #[error("genome parse error: {0}")]
    Parse(String),
    #[error("no valid tiling fits the scratchpads: {0}")]
    Capacity(String),
    #[error("invalid genome: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dim {
    M,
    N,
    K,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::M, Dim::N, Dim::K];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Dim::M => 'M',
            Dim::N => 'N',
            Dim::K => 'K',
        }
    }

    pub fn from_letter(c: char) -> Option<Dim> {
        match c {
            'M' => Some(Dim::M),
            'N' => Some(Dim::N),
            'K' => Some(Dim::K),
            _ => None,
        }
    }
}

impl fmt::Display for Dim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

/// GEMM operand roles and the dimensions each one is indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operand {
    A,
    B,
    C,
}

impl Operand {
    pub const ALL: [Operand; 3] = [Operand::A, Operand::B, Operand::C];

    pub fn depends_on(self, dim: Dim) -> bool {
        !matches!(
            (self, dim),
            (Operand::A, Dim::N) | (Operand::B, Dim::M) | (Operand::C, Dim::K)
        )
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Extents of one GEMM instance (per head for batched operators).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub elem_bytes: u64,
}

impl GemmShape {
    pub fn new(m: u64, n: u64, k: u64) -> Self {
        Self { m, n, k, elem_bytes: 1 }
    }

    pub fn get(&self, dim: Dim) -> u64 {
        match dim {
            Dim::M => self.m,
            Dim::N => self.n,
            Dim::K => self.k,
        }
    }

    pub fn macs(&self) -> u64 {
        self.m * self.n * self.k
    }
}

impl From<&crate::workload::BaseOp> for GemmShape {
    fn from(op: &crate::workload::BaseOp) -> Self {
        Self { m: op.dims.m, n: op.dims.n, k: op.dims.k, elem_bytes: op.bytes_per_element }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MapKind {
    Temporal,
    Spatial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Directive {
    pub kind: MapKind,
    pub dim: Dim,
    pub size: u64,
    pub offset: u64,
}

impl Directive {
    pub fn temporal(dim: Dim, size: u64) -> Self {
        Self { kind: MapKind::Temporal, dim, size, offset: size }
    }

    pub fn spatial(dim: Dim, size: u64) -> Self {
        Self { kind: MapKind::Spatial, dim, size, offset: size }
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            MapKind::Temporal => "TemporalMap",
            MapKind::Spatial => "SpatialMap",
        };
        write!(f, "{kind}({},{}) {}", self.size, self.offset, self.dim)
    }
}

/// One mapping level: unit count plus directives from outer to inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Level {
    pub cluster: u64,
    pub directives: [Directive; 3],
}

impl Level {
    pub fn new(cluster: u64, directives: [Directive; 3]) -> Self {
        Self { cluster, directives }
    }

    /// Builds a level from a loop order (outer first), the spatial dim and
    /// per-dim tile sizes indexed by [`Dim::index`].
    pub fn from_parts(cluster: u64, order: [Dim; 3], spatial: Dim, tiles: [u64; 3]) -> Self {
        let directives = order.map(|d| {
            if d == spatial {
                Directive::spatial(d, tiles[d.index()])
            } else {
                Directive::temporal(d, tiles[d.index()])
            }
        });
        Self { cluster, directives }
    }

    pub fn spatial_dim(&self) -> Dim {
        self.directives
            .iter()
            .find(|d| d.kind == MapKind::Spatial)
            .map(|d| d.dim)
            .unwrap_or(self.directives[0].dim)
    }

    pub fn order(&self) -> [Dim; 3] {
        self.directives.map(|d| d.dim)
    }

    pub fn position(&self, dim: Dim) -> usize {
        self.directives.iter().position(|d| d.dim == dim).unwrap_or(0)
    }

    pub fn directive(&self, dim: Dim) -> &Directive {
        &self.directives[self.position(dim)]
    }

    pub fn directive_mut(&mut self, dim: Dim) -> &mut Directive {
        let pos = self.position(dim);
        &mut self.directives[pos]
    }

    pub fn tile(&self, dim: Dim) -> u64 {
        self.directive(dim).size
    }

    pub fn tiles(&self) -> [u64; 3] {
        Dim::ALL.map(|d| self.tile(d))
    }

    pub fn set_tile(&mut self, dim: Dim, size: u64) {
        let d = self.directive_mut(dim);
        d.size = size;
        d.offset = size;
    }

    /// Exactly one spatial directive and each dimension exactly once.
    pub fn is_well_formed(&self) -> bool {
        let spatial = self.directives.iter().filter(|d| d.kind == MapKind::Spatial).count();
        let mut seen = [false; 3];
        for d in &self.directives {
            seen[d.dim.index()] = true;
        }
        spatial == 1 && seen.iter().all(|&s| s)
    }

    /// Makes `dim` the spatial directive, leaving positions unchanged.
    pub fn set_spatial(&mut self, dim: Dim) {
        for d in self.directives.iter_mut() {
            d.kind = if d.dim == dim { MapKind::Spatial } else { MapKind::Temporal };
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Cluster({});", self.cluster)?;
        for d in &self.directives {
            write!(f, " {d};")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Genome {
    pub inter: Level,
    pub intra: Level,
}

impl Genome {
    pub fn new(inter: Level, intra: Level) -> Self {
        Self { inter, intra }
    }

    pub fn level(&self, which: LevelId) -> &Level {
        match which {
            LevelId::Inter => &self.inter,
            LevelId::Intra => &self.intra,
        }
    }

    pub fn level_mut(&mut self, which: LevelId) -> &mut Level {
        match which {
            LevelId::Inter => &mut self.inter,
            LevelId::Intra => &mut self.intra,
        }
    }

    /// PEs per cluster.
    pub fn cluster_size(&self) -> u64 {
        self.intra.cluster
    }

    pub fn clusters(&self) -> u64 {
        self.inter.cluster
    }

    /// Same spatial dims, loop orders and cluster size.
    pub fn same_structure(&self, other: &Genome) -> bool {
        self.inter.order() == other.inter.order()
            && self.intra.order() == other.intra.order()
            && self.inter.spatial_dim() == other.inter.spatial_dim()
            && self.intra.spatial_dim() == other.intra.spatial_dim()
            && self.intra.cluster == other.intra.cluster
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LevelId {
    Inter,
    Intra,
}

impl fmt::Display for LevelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LevelId::Inter => "inter",
            LevelId::Intra => "intra",
        })
    }
}

impl fmt::Display for Genome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\n{}", self.inter, self.intra)
    }
}

impl FromStr for Genome {
    type Err = MappingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let items: Vec<&str> = s
            .split(';')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .collect();
        if items.len() != 8 {
            return Err(MappingError::Parse(format!(
                "expected 2 levels of Cluster + 3 directives (8 items), found {}",
                items.len()
            )));
        }
        let inter = parse_level(&items[..4])?;
        let intra = parse_level(&items[4..])?;
        Ok(Genome { inter, intra })
    }
}

fn parse_level(items: &[&str]) -> Result<Level, MappingError> {
    let cluster = items[0]
        .strip_prefix("Cluster(")
        .and_then(|r| r.strip_suffix(')'))
        .ok_or_else(|| MappingError::Parse(format!("expected Cluster(n), found {:?}", items[0])))?;
    let cluster = parse_u64(cluster)?;
    let mut directives = [Directive::temporal(Dim::M, 1); 3];
    for (slot, item) in directives.iter_mut().zip(&items[1..]) {
        *slot = parse_directive(item)?;
    }
    Ok(Level { cluster, directives })
}

fn parse_directive(item: &str) -> Result<Directive, MappingError> {
    let bad = || MappingError::Parse(format!("malformed directive {item:?}"));
    let (kind, rest) = if let Some(r) = item.strip_prefix("TemporalMap(") {
        (MapKind::Temporal, r)
    } else if let Some(r) = item.strip_prefix("SpatialMap(") {
        (MapKind::Spatial, r)
    } else {
        return Err(bad());
    };
    let (args, dim) = rest.split_once(')').ok_or_else(bad)?;
    let (size, offset) = args.split_once(',').ok_or_else(bad)?;
    let dim = dim.trim();
    let mut chars = dim.chars();
    let dim = match (chars.next().and_then(Dim::from_letter), chars.next()) {
        (Some(d), None) => d,
        _ => return Err(bad()),
    };
    Ok(Directive { kind, dim, size: parse_u64(size)?, offset: parse_u64(offset)? })
}

fn parse_u64(s: &str) -> Result<u64, MappingError> {
    s.trim()
        .parse()
        .map_err(|_| MappingError::Parse(format!("expected an integer, found {s:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPLIT_K: &str = "Cluster(1); TemporalMap(3,3) M; TemporalMap(3,3) N; SpatialMap(3,3) K;\n\
                         Cluster(3); TemporalMap(1,1) M; TemporalMap(1,1) N; SpatialMap(1,1) K;";

    #[test]
    fn text_form_is_bit_exact() {
        let g: Genome = SPLIT_K.parse().unwrap();
        assert_eq!(g.to_string(), SPLIT_K);
        assert_eq!(g.intra.spatial_dim(), Dim::K);
        assert_eq!(g.cluster_size(), 3);
        assert_eq!(g.inter.order(), [Dim::M, Dim::N, Dim::K]);
    }

    #[test]
    fn parser_tolerates_whitespace() {
        let loose = SPLIT_K.replace("; ", ";\n  ");
        assert_eq!(loose.parse::<Genome>().unwrap().to_string(), SPLIT_K);
    }

    #[test]
    fn parse_errors() {
        assert!("Cluster(1); TemporalMap(1,1) M;".parse::<Genome>().is_err());
        let bad_dim = SPLIT_K.replace("SpatialMap(1,1) K", "SpatialMap(1,1) Z");
        assert!(bad_dim.parse::<Genome>().is_err());
        let bad_num = SPLIT_K.replace("Cluster(3)", "Cluster(x)");
        assert!(bad_num.parse::<Genome>().is_err());
    }

    #[test]
    fn two_spatial_maps_parse_but_are_malformed() {
        let g: Genome = SPLIT_K
            .replace("Cluster(3); TemporalMap(1,1) M", "Cluster(3); SpatialMap(1,1) M")
            .parse()
            .unwrap();
        assert!(!g.intra.is_well_formed());
        assert!(g.inter.is_well_formed());
    }

    #[test]
    fn operand_relevance() {
        assert!(Operand::A.depends_on(Dim::M) && Operand::A.depends_on(Dim::K));
        assert!(!Operand::A.depends_on(Dim::N));
        assert!(!Operand::B.depends_on(Dim::M));
        assert!(!Operand::C.depends_on(Dim::K));
    }
}
