//! Experiment configuration: one JSON document, unknown keys rejected.

use crate::error::{CliError, Result};
use samt_core::costmodel::{EnergyModel, HardwareConfig};
use samt_core::mapping::AcceleratorTemplate;
use samt_core::search::{DataflowMode, GaConfig};
use samt_core::workload::{ModelDims, OpId};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelDims,
    #[serde(default)]
    pub hardware: HardwareSection,
    #[serde(default = "default_accelerator")]
    pub accelerator: Accelerator,
    #[serde(default = "default_mode")]
    pub dataflow_mode: DataflowMode,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Sweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analyze: Option<AnalyzeSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_accelerator() -> Accelerator {
    Accelerator::Named("flexible".into())
}

fn default_mode() -> DataflowMode {
    DataflowMode::Flexible
}

/// Hardware as a preset name with optional per-field overrides, or fully
/// spelled out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pe_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2_bytes: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bw_noc_bytes_per_sec: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bw_offchip_bytes_per_sec: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clock_hz: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergyModel>,
}

impl HardwareSection {
    pub fn resolve(&self) -> Result<HardwareConfig> {
        let base = match &self.preset {
            Some(name) => Some(
                HardwareConfig::preset(name)
                    .ok_or_else(|| CliError::Validation(format!("hardware.preset: unknown preset '{name}'")))?,
            ),
            None => None,
        };
        let field = |v: Option<u64>, from: fn(&HardwareConfig) -> u64, key: &str| -> Result<u64> {
            v.or(base.as_ref().map(from))
                .ok_or_else(|| CliError::Validation(format!("hardware.{key}: required without a preset")))
        };
        let hw = HardwareConfig {
            pe_count: field(self.pe_count, |h| h.pe_count, "pe_count")?,
            s1_bytes: field(self.s1_bytes, |h| h.s1_bytes, "s1_bytes")?,
            s2_bytes: field(self.s2_bytes, |h| h.s2_bytes, "s2_bytes")?,
            bw_noc_bytes_per_sec: field(self.bw_noc_bytes_per_sec, |h| h.bw_noc_bytes_per_sec, "bw_noc_bytes_per_sec")?,
            bw_offchip_bytes_per_sec: field(
                self.bw_offchip_bytes_per_sec,
                |h| h.bw_offchip_bytes_per_sec,
                "bw_offchip_bytes_per_sec",
            )?,
            clock_hz: self.clock_hz.or(base.as_ref().map(|h| h.clock_hz)).unwrap_or(1_000_000_000),
            energy: self.energy.or(base.as_ref().map(|h| h.energy)).unwrap_or_default(),
        };
        hw.validate().map_err(|e| CliError::Validation(format!("hardware: {e}")))?;
        Ok(hw)
    }
}

/// A built-in template by name, or a custom template spelled out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Accelerator {
    Named(String),
    Custom(AcceleratorTemplate),
}

impl Accelerator {
    pub fn resolve(&self) -> Result<AcceleratorTemplate> {
        let t = match self {
            Accelerator::Named(name) => AcceleratorTemplate::by_name(name)
                .ok_or_else(|| CliError::Validation(format!("accelerator: unknown template '{name}'")))?,
            Accelerator::Custom(t) => t.clone(),
        };
        t.validate().map_err(|e| CliError::Validation(format!("accelerator: {e}")))?;
        Ok(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    PeCount,
    S1Bytes,
    S2Bytes,
    BwNocBytesPerSec,
    BwOffchipBytesPerSec,
    L,
    D,
    Accelerator,
    Seed,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::PeCount => "pe_count",
            SweepParameter::S1Bytes => "s1_bytes",
            SweepParameter::S2Bytes => "s2_bytes",
            SweepParameter::BwNocBytesPerSec => "bw_noc_bytes_per_sec",
            SweepParameter::BwOffchipBytesPerSec => "bw_offchip_bytes_per_sec",
            SweepParameter::L => "l",
            SweepParameter::D => "d",
            SweepParameter::Accelerator => "accelerator",
            SweepParameter::Seed => "seed",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeSection {
    /// Restricts the report to these operators.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ops: Vec<OpId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default)]
    pub format: Format,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("config line {} column {}: {e}", e.line(), e.column())))?;
        cfg.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        cfg.ga.validate().map_err(|e| CliError::Validation(format!("ga: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copy with one swept parameter replaced.
    pub fn with_value(&self, parameter: SweepParameter, value: &serde_json::Value) -> Result<Self> {
        let bad = || CliError::Validation(format!("sweep value {value} is not valid for {}", parameter.name()));
        let mut out = self.clone();
        let num = || value.as_u64().ok_or_else(bad);
        match parameter {
            SweepParameter::PeCount => out.hardware.pe_count = Some(num()?),
            SweepParameter::S1Bytes => out.hardware.s1_bytes = Some(num()?),
            SweepParameter::S2Bytes => out.hardware.s2_bytes = Some(num()?),
            SweepParameter::BwNocBytesPerSec => out.hardware.bw_noc_bytes_per_sec = Some(num()?),
            SweepParameter::BwOffchipBytesPerSec => out.hardware.bw_offchip_bytes_per_sec = Some(num()?),
            SweepParameter::L => out.model.l = num()?,
            SweepParameter::D => out.model.d = num()?,
            SweepParameter::Seed => out.ga.seed = num()?,
            SweepParameter::Accelerator => {
                out.accelerator = serde_json::from_value(value.clone()).map_err(|_| bad())?;
            }
        }
        out.model.validate().map_err(|e| CliError::Validation(format!("model: {e}")))?;
        Ok(out)
    }
}
