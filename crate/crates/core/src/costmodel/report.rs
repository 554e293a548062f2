use super::HardwareConfig;
use serde::{Deserialize, Serialize};

/// Cost of an operator, chain or layer. Traffic is in bytes, time in cycles.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub latency_cycles: u64,
    pub compute_cycles: u64,
    pub mem_bound_cycles: u64,
    pub energy_units: f64,
    pub acc_s1: u64,
    pub acc_s2: u64,
    pub acc_s3: u64,
    pub pe_utilization: f64,
    /// Busy PEs in a step over full chunks, as a fraction of all PEs.
    pub full_tile_utilization: f64,
    pub mac_count: u64,
    pub nonlinear_ops: u64,
    pub s1_bytes_needed: u64,
    pub s2_bytes_needed: u64,
}

impl CostReport {
    /// Fills latency, energy and utilization from the raw counts.
    pub(crate) fn finish(mut self, hw: &HardwareConfig) -> Self {
        self.mem_bound_cycles = hw.offchip_cycles(self.acc_s3).max(hw.noc_cycles(self.acc_s2));
        self.latency_cycles = self.compute_cycles.max(self.mem_bound_cycles);
        let e = &hw.energy;
        self.energy_units = e.e_mac * (self.mac_count + self.nonlinear_ops) as f64
            + e.e_s1 * self.acc_s1 as f64
            + e.e_s2 * self.acc_s2 as f64
            + e.e_s3 * self.acc_s3 as f64;
        self.pe_utilization = utilization(self.mac_count, self.compute_cycles, hw.pe_count);
        self
    }

    /// Sequential composition: stages run one after another.
    pub fn sequence<'a>(parts: impl IntoIterator<Item = &'a CostReport>, hw: &HardwareConfig) -> CostReport {
        let mut out = CostReport::default();
        let mut weighted = 0.0;
        for p in parts {
            out.latency_cycles += p.latency_cycles;
            out.compute_cycles += p.compute_cycles;
            out.mem_bound_cycles += p.mem_bound_cycles;
            out.energy_units += p.energy_units;
            out.acc_s1 += p.acc_s1;
            out.acc_s2 += p.acc_s2;
            out.acc_s3 += p.acc_s3;
            out.mac_count += p.mac_count;
            out.nonlinear_ops += p.nonlinear_ops;
            out.s1_bytes_needed = out.s1_bytes_needed.max(p.s1_bytes_needed);
            out.s2_bytes_needed = out.s2_bytes_needed.max(p.s2_bytes_needed);
            weighted += p.full_tile_utilization * p.mac_count as f64;
        }
        out.pe_utilization = utilization(out.mac_count, out.compute_cycles, hw.pe_count);
        out.full_tile_utilization = if out.mac_count > 0 { weighted / out.mac_count as f64 } else { 0.0 };
        out
    }
}

fn utilization(macs: u64, cycles: u64, pes: u64) -> f64 {
    if cycles == 0 {
        0.0
    } else {
        macs as f64 / (cycles as f64 * pes as f64)
    }
}
