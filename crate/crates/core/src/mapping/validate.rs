use super::{AcceleratorTemplate, Dim, GemmShape, Genome, LevelId, LevelStyle};
use crate::costmodel::HardwareConfig;
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Structure { level: LevelId, detail: String },
    TileSize { level: LevelId, dim: Dim, size: u64, limit: u64 },
    Offset { level: LevelId, dim: Dim, size: u64, offset: u64 },
    Cluster { level: LevelId, value: u64, detail: String },
    CrossClusterReduction { clusters: u64 },
    Template { level: LevelId, detail: String },
    S1Capacity { needed: u64, available: u64 },
    S2Capacity { needed: u64, available: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Structure { level, detail } => write!(f, "{level} level: {detail}"),
            Violation::TileSize { level, dim, size, limit } => {
                write!(f, "{level} level, directive {dim}: size {size} outside 1..={limit}")
            }
            Violation::Offset { level, dim, size, offset } => write!(
                f,
                "{level} level, directive {dim}: offset {offset} must equal size {size}"
            ),
            Violation::Cluster { level, value, detail } => {
                write!(f, "{level} level, Cluster({value}): {detail}")
            }
            Violation::CrossClusterReduction { clusters } => write!(
                f,
                "inter level, SpatialMap K over {clusters} clusters needs cross-cluster reduction"
            ),
            Violation::Template { level, detail } => write!(f, "{level} level: {detail}"),
            Violation::S1Capacity { needed, available } => {
                write!(f, "per-PE tiles need {needed} B of S1, only {available} B available")
            }
            Violation::S2Capacity { needed, available } => {
                write!(f, "inter-cluster tiles need {needed} B of S2, only {available} B available")
            }
        }
    }
}

/// Scratchpad requirements `(s1_bytes_per_pe, s2_bytes)` of a genome.
///
/// S1 holds one intra tile of each operand. S2 holds the union of the tiles of
/// all clusters active in one inter step.
pub fn footprints(genome: &Genome, shape: &GemmShape) -> (u64, u64) {
    let u = genome.intra.tiles();
    let s1 = (u[0] * u[2] + u[2] * u[1] + u[0] * u[1]) * shape.elem_bytes;
    let mut span = genome.inter.tiles();
    let s = genome.inter.spatial_dim();
    span[s.index()] = (span[s.index()] * genome.inter.cluster).min(shape.get(s)).max(1);
    let s2 = (span[0] * span[2] + span[2] * span[1] + span[0] * span[1]) * shape.elem_bytes;
    (s1, s2)
}

/// Checks a genome against operator dims, hardware and template.
pub fn validate(
    genome: &Genome,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    for level in [LevelId::Inter, LevelId::Intra] {
        let l = genome.level(level);
        if !l.is_well_formed() {
            v.push(Violation::Structure {
                level,
                detail: "needs exactly one SpatialMap and each of M, N, K once".into(),
            });
        }
    }
    if !v.is_empty() {
        return Err(v);
    }

    for level in [LevelId::Inter, LevelId::Intra] {
        let l = genome.level(level);
        for d in &l.directives {
            let limit = match level {
                LevelId::Inter => shape.get(d.dim),
                LevelId::Intra => genome.inter.tile(d.dim).min(shape.get(d.dim)),
            };
            if d.size == 0 || d.size > limit {
                v.push(Violation::TileSize { level, dim: d.dim, size: d.size, limit });
            }
            if d.offset != d.size {
                v.push(Violation::Offset { level, dim: d.dim, size: d.size, offset: d.offset });
            }
        }
        if l.cluster == 0 {
            v.push(Violation::Cluster { level, value: 0, detail: "must be >= 1".into() });
        }
    }

    let (x, c) = (genome.inter.cluster, genome.intra.cluster);
    if x.saturating_mul(c) > hw.pe_count {
        v.push(Violation::Cluster {
            level: LevelId::Inter,
            value: x,
            detail: format!("{x} clusters of {c} PEs exceed {} PEs", hw.pe_count),
        });
    }
    if genome.inter.spatial_dim() == Dim::K && x > 1 {
        v.push(Violation::CrossClusterReduction { clusters: x });
    }

    for level in [LevelId::Inter, LevelId::Intra] {
        let l = genome.level(level);
        let actual = LevelStyle::new(l.order(), l.spatial_dim());
        if !template.supports_spatial_reduction && actual.spatial == Dim::K {
            v.push(Violation::Template {
                level,
                detail: format!("{} does not support spatial reduction over K", template.name()),
            });
        }
        if let Some(want) = template.fixed_style(level) {
            if want != actual {
                v.push(Violation::Template {
                    level,
                    detail: format!("{} requires {want}, found {actual}", template.name()),
                });
            }
        }
    }
    if let Some(want) = template.effective_cluster_size(hw.pe_count) {
        if c != want {
            v.push(Violation::Template {
                level: LevelId::Intra,
                detail: format!("{} requires Cluster({want}), found Cluster({c})", template.name()),
            });
        }
    }

    let (s1, s2) = footprints(genome, shape);
    if s1 > hw.s1_bytes {
        v.push(Violation::S1Capacity { needed: s1, available: hw.s1_bytes });
    }
    if s2 > hw.s2_bytes {
        v.push(Violation::S2Capacity { needed: s2, available: hw.s2_bytes });
    }

    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}
