use crate::costmodel::LayerMapping;
use crate::fusion::FusionCode;
use serde::{Deserialize, Serialize};

/// A searched layer configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub latency_cycles: u64,
    pub energy_units: f64,
    /// S2 the configuration occupies: resident chain tensors plus tiles.
    pub s2_bytes_needed: u64,
    pub fusion_code: FusionCode,
    pub template: String,
    pub mapping: LayerMapping,
}

impl ParetoPoint {
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.latency_cycles <= other.latency_cycles
            && self.energy_units <= other.energy_units
            && (self.latency_cycles < other.latency_cycles || self.energy_units < other.energy_units)
    }

    fn tie_key(&self) -> (u8, &str, String) {
        let genomes = self.mapping.values().map(|g| g.to_string()).collect::<Vec<_>>().join("|");
        (self.fusion_code.bits(), self.template.as_str(), genomes)
    }
}

/// Non-dominated subset ordered by latency. Points with equal cost collapse
/// to the one with the lowest code, template and genome text.
pub fn pareto_front(mut points: Vec<ParetoPoint>) -> Vec<ParetoPoint> {
    points.sort_by(|a, b| {
        a.latency_cycles
            .cmp(&b.latency_cycles)
            .then(a.energy_units.total_cmp(&b.energy_units))
            .then_with(|| a.tie_key().cmp(&b.tie_key()))
    });
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in points {
        if front.last().is_none_or(|q| p.energy_units < q.energy_units) {
            front.push(p);
        }
    }
    front
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(lat: u64, e: f64, code: u8) -> ParetoPoint {
        ParetoPoint {
            latency_cycles: lat,
            energy_units: e,
            s2_bytes_needed: 0,
            fusion_code: FusionCode::from_bits(code).unwrap(),
            template: "flexible".into(),
            mapping: LayerMapping::new(),
        }
    }

    #[test]
    fn drops_dominated_and_duplicates() {
        let front = pareto_front(vec![pt(10, 5.0, 3), pt(8, 9.0, 1), pt(10, 5.0, 2), pt(12, 5.0, 0), pt(9, 9.0, 4)]);
        let got: Vec<_> = front.iter().map(|p| (p.latency_cycles, p.fusion_code.bits())).collect();
        assert_eq!(got, vec![(8, 1), (10, 2)]);
        for a in &front {
            assert!(front.iter().all(|b| !b.dominates(a)));
        }
    }
}
