use serde::{Deserialize, Serialize};

/// Energy per MAC and per byte accessed at each memory level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyModel {
    pub e_mac: f64,
    pub e_s1: f64,
    pub e_s2: f64,
    pub e_s3: f64,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { e_mac: 1.0, e_s1: 1.0, e_s2: 6.0, e_s3: 200.0 }
    }
}

/// Spatial accelerator resources. Bandwidths are bytes/second and convert to
/// bytes/cycle through `clock_hz`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub pe_count: u64,
    /// Local scratchpad per PE.
    pub s1_bytes: u64,
    /// Shared scratchpad.
    pub s2_bytes: u64,
    pub bw_noc_bytes_per_sec: u64,
    pub bw_offchip_bytes_per_sec: u64,
    #[serde(default = "default_clock")]
    pub clock_hz: u64,
    #[serde(default)]
    pub energy: EnergyModel,
}

fn default_clock() -> u64 {
    1_000_000_000
}

pub const KIB: u64 = 1 << 10;
pub const MIB: u64 = 1 << 20;
pub const GB_PER_SEC: u64 = 1_000_000_000;

impl HardwareConfig {
    pub fn edge() -> Self {
        Self {
            pe_count: 256,
            s1_bytes: 256,
            s2_bytes: 20 * MIB,
            bw_noc_bytes_per_sec: 16 * GB_PER_SEC,
            bw_offchip_bytes_per_sec: 80 * GB_PER_SEC,
            clock_hz: default_clock(),
            energy: EnergyModel::default(),
        }
    }

    pub fn mobile() -> Self {
        Self {
            pe_count: 4098,
            s1_bytes: 512,
            s2_bytes: 40 * MIB,
            bw_noc_bytes_per_sec: 40 * GB_PER_SEC,
            bw_offchip_bytes_per_sec: 80 * GB_PER_SEC,
            ..Self::edge()
        }
    }

    pub fn cloud() -> Self {
        Self {
            pe_count: 65536,
            s1_bytes: 2048,
            s2_bytes: 100 * MIB,
            bw_noc_bytes_per_sec: 800 * GB_PER_SEC,
            bw_offchip_bytes_per_sec: 1000 * GB_PER_SEC,
            ..Self::edge()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "edge" => Some(Self::edge()),
            "mobile" => Some(Self::mobile()),
            "cloud" => Some(Self::cloud()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("pe_count", self.pe_count),
            ("s1_bytes", self.s1_bytes),
            ("s2_bytes", self.s2_bytes),
            ("bw_noc_bytes_per_sec", self.bw_noc_bytes_per_sec),
            ("bw_offchip_bytes_per_sec", self.bw_offchip_bytes_per_sec),
            ("clock_hz", self.clock_hz),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(format!("{name} must be > 0"));
            }
        }
        let e = &self.energy;
        for (name, v) in [("e_mac", e.e_mac), ("e_s1", e.e_s1), ("e_s2", e.e_s2), ("e_s3", e.e_s3)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("energy.{name} must be > 0"));
            }
        }
        Ok(())
    }

    /// Cycles to move `bytes` at `bytes_per_sec`; fractional bytes/cycle accumulate.
    pub fn transfer_cycles(&self, bytes: u64, bytes_per_sec: u64) -> u64 {
        let num = bytes as u128 * self.clock_hz as u128;
        num.div_ceil(bytes_per_sec as u128) as u64
    }

    pub fn noc_cycles(&self, bytes: u64) -> u64 {
        self.transfer_cycles(bytes, self.bw_noc_bytes_per_sec)
    }

    pub fn offchip_cycles(&self, bytes: u64) -> u64 {
        self.transfer_cycles(bytes, self.bw_offchip_bytes_per_sec)
    }

    pub fn with_s2(&self, s2_bytes: u64) -> Self {
        Self { s2_bytes, ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_noc_is_16_bytes_per_cycle() {
        let hw = HardwareConfig::edge();
        assert_eq!(hw.noc_cycles(16), 1);
        assert_eq!(hw.noc_cycles(17), 2);
        assert_eq!(hw.offchip_cycles(800), 10);
    }

    #[test]
    fn fractional_bandwidth_accumulates() {
        let hw = HardwareConfig { bw_noc_bytes_per_sec: 500_000_000, ..HardwareConfig::edge() };
        // half a byte per cycle
        assert_eq!(hw.noc_cycles(3), 6);
    }

    #[test]
    fn presets_validate() {
        for name in ["edge", "mobile", "cloud"] {
            HardwareConfig::preset(name).unwrap().validate().unwrap();
        }
        let mut hw = HardwareConfig::edge();
        hw.pe_count = 0;
        assert!(hw.validate().is_err());
    }
}
