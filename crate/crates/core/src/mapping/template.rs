use super::{Dim, Genome, LevelId};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Per-level dataflow style such as `TTS-NMK`: map kinds then loop order,
/// outermost first. The single `S` marks the spatially mapped dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelStyle {
    pub order: [Dim; 3],
    pub spatial: Dim,
}

impl LevelStyle {
    pub fn new(order: [Dim; 3], spatial: Dim) -> Self {
        Self { order, spatial }
    }

    /// All 18 styles (3 spatial choices x 6 orders).
    pub fn all() -> Vec<LevelStyle> {
        let mut out = Vec::with_capacity(18);
        for order in permutations() {
            for spatial in Dim::ALL {
                out.push(LevelStyle { order, spatial });
            }
        }
        out
    }
}

pub(crate) fn permutations() -> [[Dim; 3]; 6] {
    use Dim::*;
    [[M, N, K], [M, K, N], [N, M, K], [N, K, M], [K, M, N], [K, N, M]]
}

impl fmt::Display for LevelStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.order {
            f.write_str(if d == self.spatial { "S" } else { "T" })?;
        }
        f.write_str("-")?;
        for d in self.order {
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

impl FromStr for LevelStyle {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("invalid dataflow style {s:?}, expected e.g. \"TTS-NMK\"");
        let (kinds, dims) = s.trim().split_once('-').ok_or_else(bad)?;
        let kinds: Vec<char> = kinds.chars().collect();
        let dims: Vec<Dim> = dims.chars().map(Dim::from_letter).collect::<Option<_>>().ok_or_else(bad)?;
        if kinds.len() != 3 || dims.len() != 3 {
            return Err(bad());
        }
        let order = [dims[0], dims[1], dims[2]];
        if order[0] == order[1] || order[1] == order[2] || order[0] == order[2] {
            return Err(bad());
        }
        let mut spatial = None;
        for (k, d) in kinds.iter().zip(order) {
            match k {
                'S' if spatial.is_none() => spatial = Some(d),
                'T' => {}
                _ => return Err(bad()),
            }
        }
        Ok(LevelStyle { order, spatial: spatial.ok_or_else(bad)? })
    }
}

impl Serialize for LevelStyle {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LevelStyle {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    #[serde(rename = "shidiannao-like")]
    ShiDianNao,
    #[serde(rename = "nvdla-like")]
    Nvdla,
    #[serde(rename = "eyeriss-like")]
    Eyeriss,
    #[serde(rename = "tpu-like")]
    Tpu,
    Flexible,
    /// Structure pinned from an existing genome.
    Custom,
}

impl TemplateKind {
    pub const BUILTIN: [TemplateKind; 5] = [
        TemplateKind::ShiDianNao,
        TemplateKind::Nvdla,
        TemplateKind::Eyeriss,
        TemplateKind::Tpu,
        TemplateKind::Flexible,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::ShiDianNao => "shidiannao-like",
            TemplateKind::Nvdla => "nvdla-like",
            TemplateKind::Eyeriss => "eyeriss-like",
            TemplateKind::Tpu => "tpu-like",
            TemplateKind::Flexible => "flexible",
            TemplateKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        let n = name.trim().to_ascii_lowercase().replace('_', "-");
        Self::BUILTIN
            .into_iter()
            .chain([TemplateKind::Custom])
            .find(|k| k.name() == n || k.name().trim_end_matches("-like") == n)
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dataflow constraints of an accelerator family. `None` styles are free.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorTemplate {
    pub kind: TemplateKind,
    #[serde(default)]
    pub inter: Option<LevelStyle>,
    #[serde(default)]
    pub intra: Option<LevelStyle>,
    /// PEs per cluster, clipped to the PE count.
    #[serde(default)]
    pub cluster_size: Option<u64>,
    pub supports_spatial_reduction: bool,
    /// Multicast modeled as neighbour-to-neighbour forwarding.
    #[serde(default)]
    pub forwarding: bool,
}

fn style(s: &str) -> Option<LevelStyle> {
    Some(s.parse().expect("builtin style"))
}

impl AcceleratorTemplate {
    pub fn builtin(kind: TemplateKind) -> Self {
        match kind {
            // output stationary, no spatial reduction: spatial N inside clusters
            TemplateKind::ShiDianNao => Self {
                kind,
                inter: style("STT-MNK"),
                intra: style("TST-MNK"),
                cluster_size: Some(16),
                supports_spatial_reduction: false,
                forwarding: false,
            },
            TemplateKind::Nvdla => Self {
                kind,
                inter: style("TST-NMK"),
                intra: style("TTS-NMK"),
                cluster_size: Some(64),
                supports_spatial_reduction: true,
                forwarding: false,
            },
            TemplateKind::Eyeriss => Self {
                kind,
                inter: style("STT-NMK"),
                intra: style("TST-MKN"),
                cluster_size: Some(16),
                supports_spatial_reduction: true,
                forwarding: false,
            },
            // weight stationary systolic array
            TemplateKind::Tpu => Self {
                kind,
                inter: style("STT-MKN"),
                intra: style("STT-KMN"),
                cluster_size: Some(16),
                supports_spatial_reduction: true,
                forwarding: true,
            },
            TemplateKind::Flexible | TemplateKind::Custom => Self {
                kind,
                inter: None,
                intra: None,
                cluster_size: None,
                supports_spatial_reduction: true,
                forwarding: false,
            },
        }
    }

    pub fn flexible() -> Self {
        Self::builtin(TemplateKind::Flexible)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        TemplateKind::from_name(name).map(Self::builtin)
    }

    pub fn all_builtin() -> Vec<Self> {
        TemplateKind::BUILTIN.into_iter().map(Self::builtin).collect()
    }

    /// A template that fixes every structural choice of `genome`.
    pub fn pinned(genome: &Genome, supports_spatial_reduction: bool) -> Self {
        Self {
            kind: TemplateKind::Custom,
            inter: Some(LevelStyle::new(genome.inter.order(), genome.inter.spatial_dim())),
            intra: Some(LevelStyle::new(genome.intra.order(), genome.intra.spatial_dim())),
            cluster_size: Some(genome.intra.cluster),
            supports_spatial_reduction,
            forwarding: false,
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind.name()
    }

    /// Each operator may pick its own dataflow.
    pub fn per_operator_dataflow(&self) -> bool {
        self.inter.is_none() || self.intra.is_none() || self.cluster_size.is_none()
    }

    pub fn fixed_style(&self, level: LevelId) -> Option<LevelStyle> {
        match level {
            LevelId::Inter => self.inter,
            LevelId::Intra => self.intra,
        }
    }

    /// Styles a genome may use at `level`.
    pub fn styles(&self, level: LevelId) -> Vec<LevelStyle> {
        match self.fixed_style(level) {
            Some(s) => vec![s],
            None => LevelStyle::all()
                .into_iter()
                .filter(|s| self.supports_spatial_reduction || s.spatial != Dim::K)
                .collect(),
        }
    }

    pub fn effective_cluster_size(&self, pe_count: u64) -> Option<u64> {
        self.cluster_size.map(|c| c.clamp(1, pe_count.max(1)))
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.supports_spatial_reduction {
            for s in [self.inter, self.intra].into_iter().flatten() {
                if s.spatial == Dim::K {
                    return Err(format!(
                        "template {} maps K spatially but does not support spatial reduction",
                        self.name()
                    ));
                }
            }
        }
        if self.cluster_size == Some(0) {
            return Err("cluster_size must be >= 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn style_round_trip() {
        for s in LevelStyle::all() {
            let text = s.to_string();
            assert_eq!(text.parse::<LevelStyle>().unwrap(), s);
        }
        let s: LevelStyle = "TTS-NMK".parse().unwrap();
        assert_eq!(s.spatial, Dim::K);
        assert_eq!(s.order, [Dim::N, Dim::M, Dim::K]);
    }

    #[test]
    fn style_rejects_garbage() {
        for bad in ["TTT-NMK", "TSS-NMK", "TTS-NNK", "TS-NM", "TTS-NMX", "TTSNMK"] {
            assert!(bad.parse::<LevelStyle>().is_err(), "{bad}");
        }
    }

    #[test]
    fn builtins_are_consistent() {
        for t in AcceleratorTemplate::all_builtin() {
            t.validate().unwrap();
            assert_eq!(t.per_operator_dataflow(), t.kind == TemplateKind::Flexible);
        }
        let sdn = AcceleratorTemplate::builtin(TemplateKind::ShiDianNao);
        assert!(sdn.styles(LevelId::Intra).iter().all(|s| s.spatial != Dim::K));
        assert_eq!(AcceleratorTemplate::flexible().styles(LevelId::Inter).len(), 18);
    }

    #[test]
    fn names_resolve() {
        assert_eq!(TemplateKind::from_name("NVDLA-like"), Some(TemplateKind::Nvdla));
        assert_eq!(TemplateKind::from_name("tpu"), Some(TemplateKind::Tpu));
        assert_eq!(TemplateKind::from_name("flexible"), Some(TemplateKind::Flexible));
        assert_eq!(TemplateKind::from_name("gpu"), None);
    }

    #[test]
    fn serde_uses_style_strings() {
        let t = AcceleratorTemplate::builtin(TemplateKind::Nvdla);
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains("\"TTS-NMK\""), "{json}");
        let back: AcceleratorTemplate = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
