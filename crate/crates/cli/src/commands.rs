//! Experiment drivers behind the subcommands.

use crate::config::{ExperimentConfig, Format, SweepParameter};
use crate::error::{CliError, Result};
use crate::output::{csv_string, json_string, write_atomic};
use rayon::prelude::*;
use samt_core::costmodel::{evaluate_layer, CostReport, HardwareConfig, LayerMapping};
use samt_core::fusion::{enumerate_codes, FusionCode};
use samt_core::mapping::{validate, AcceleratorTemplate, GemmShape, Genome};
use samt_core::search::{full_search, SearchResult};
use samt_core::workload::{arithmetic_intensity, build_layer, OpId};
use serde::Serialize;
use std::path::{Path, PathBuf};

/// Command-line overrides shared by all subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.ga.seed = seed;
        }
        if let Some(f) = self.format {
            cfg.output.format = f;
        }
        if let Some(out) = &self.out {
            cfg.output.dir = Some(out.display().to_string());
        }
    }
}

fn render<T: Serialize>(rows: &[T], format: Format) -> Result<String> {
    match format {
        Format::Csv => csv_string(rows),
        Format::Json => Ok(json_string(rows)),
    }
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Csv => "csv",
        Format::Json => "json",
    }
}

/// Writes `text` under the configured output dir, if any, and returns it.
fn emit(cfg: &ExperimentConfig, stem: &str, text: String) -> Result<String> {
    if let Some(dir) = &cfg.output.dir {
        let path = Path::new(dir).join(format!("{stem}.{}", extension(cfg.output.format)));
        write_atomic(&path, text.as_bytes())?;
    }
    Ok(text)
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalyzeRow {
    pub l: u64,
    pub op: String,
    pub flops: u64,
    pub mops: u64,
    pub intensity: f64,
}

pub fn analyze_rows(cfg: &ExperimentConfig) -> Result<Vec<AnalyzeRow>> {
    let ls: Vec<u64> = match &cfg.sweep {
        Some(s) if s.parameter == SweepParameter::L => s
            .values
            .iter()
            .map(|v| v.as_u64().ok_or_else(|| CliError::Validation(format!("sweep value {v} is not a length"))))
            .collect::<Result<_>>()?,
        _ => vec![cfg.model.l],
    };
    let only: &[OpId] = cfg.analyze.as_ref().map(|a| a.ops.as_slice()).unwrap_or(&[]);
    let mut rows = Vec::new();
    for l in ls {
        let mut dims = cfg.model.clone();
        dims.l = l;
        let layer = build_layer(&dims).map_err(|e| CliError::Validation(format!("model: {e}")))?;
        for op in layer.iter().filter(|o| only.is_empty() || only.contains(&o.id)) {
            rows.push(AnalyzeRow {
                l,
                op: op.id.name().to_string(),
                flops: op.flops,
                mops: op.mops,
                intensity: op.flops as f64 / op.mops as f64,
            });
        }
        if only.is_empty() {
            rows.push(AnalyzeRow {
                l,
                op: "layer".into(),
                flops: layer.iter().map(|o| o.flops).sum(),
                mops: layer.iter().map(|o| o.mops).sum(),
                intensity: arithmetic_intensity(&layer).map_err(|e| CliError::Validation(e.to_string()))?,
            });
        }
    }
    Ok(rows)
}

pub fn analyze(cfg: &ExperimentConfig) -> Result<String> {
    emit(cfg, "analyze", render(&analyze_rows(cfg)?, cfg.output.format)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct FusionTableRow {
    pub code: String,
    pub chains: String,
    pub memory_reduced: u64,
    pub s2_required: u64,
    pub feasible: bool,
}

pub fn enumerate_fusions(cfg: &ExperimentConfig) -> Result<String> {
    let hw = cfg.hardware.resolve()?;
    let rows: Vec<FusionTableRow> = enumerate_codes(&cfg.model, &hw)
        .map_err(|e| CliError::Validation(e.to_string()))?
        .into_iter()
        .map(|r| FusionTableRow {
            code: r.code.to_string(),
            chains: if r.chains.is_empty() { "-".into() } else { r.chains.join("+") },
            memory_reduced: r.memory_reduced,
            s2_required: r.s2_required,
            feasible: r.feasible,
        })
        .collect();
    emit(cfg, "fusions", render(&rows, cfg.output.format)?)
}

/// Reads a genome file: a bare genome applies to every GEMM operator, and
/// `@OpName` lines start a genome for that operator alone.
pub fn parse_genome_file(text: &str, ops: &[OpId]) -> Result<LayerMapping> {
    let mut sections: Vec<(Option<OpId>, String)> = vec![(None, String::new())];
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('@') {
            let op = OpId::from_name(name.trim())
                .ok_or_else(|| CliError::Validation(format!("genome file: unknown operator '{}'", name.trim())))?;
            sections.push((Some(op), String::new()));
        } else {
            let body = &mut sections.last_mut().expect("section").1;
            body.push_str(line);
            body.push('\n');
        }
    }
    let parse = |label: &str, body: &str| -> Result<Genome> {
        body.parse().map_err(|e| CliError::Validation(format!("genome file, {label}: {e}")))
    };
    let mut out = LayerMapping::new();
    let (_, shared) = &sections[0];
    if !shared.is_empty() {
        let g = parse("shared genome", shared)?;
        for &op in ops {
            out.insert(op, g);
        }
    }
    for (op, body) in &sections[1..] {
        let op = op.expect("named section");
        out.insert(op, parse(op.name(), body)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub op: String,
    pub latency_cycles: u64,
    pub compute_cycles: u64,
    pub mem_bound_cycles: u64,
    pub energy_units: f64,
    pub acc_s1: u64,
    pub acc_s2: u64,
    pub acc_s3: u64,
    pub pe_utilization: f64,
    pub full_tile_utilization: f64,
    pub mac_count: u64,
    pub nonlinear_ops: u64,
    pub s1_bytes_needed: u64,
    pub s2_bytes_needed: u64,
}

impl CostRow {
    fn new(op: &str, r: &CostReport) -> Self {
        Self {
            op: op.to_string(),
            latency_cycles: r.latency_cycles,
            compute_cycles: r.compute_cycles,
            mem_bound_cycles: r.mem_bound_cycles,
            energy_units: r.energy_units,
            acc_s1: r.acc_s1,
            acc_s2: r.acc_s2,
            acc_s3: r.acc_s3,
            pe_utilization: r.pe_utilization,
            full_tile_utilization: r.full_tile_utilization,
            mac_count: r.mac_count,
            nonlinear_ops: r.nonlinear_ops,
            s1_bytes_needed: r.s1_bytes_needed,
            s2_bytes_needed: r.s2_bytes_needed,
        }
    }
}

/// Evaluates a layer under given genomes; the last row is the layer total.
pub fn cost_rows(cfg: &ExperimentConfig, genome_text: &str, code: FusionCode) -> Result<Vec<CostRow>> {
    let hw = cfg.hardware.resolve()?;
    let template = cfg.accelerator.resolve()?;
    let layer = build_layer(&cfg.model).map_err(|e| CliError::Validation(format!("model: {e}")))?;
    let gemms: Vec<OpId> = layer.iter().filter(|o| o.is_gemm()).map(|o| o.id).collect();
    let mapping = parse_genome_file(genome_text, &gemms)?;
    for op in layer.iter().filter(|o| o.is_gemm()) {
        if let Some(g) = mapping.get(&op.id) {
            check_template(g, op.id, &GemmShape::from(op), &hw, &template)?;
        }
    }
    let report = evaluate_layer(code, &mapping, &cfg.model, &hw, template.forwarding)?;
    let mut rows: Vec<CostRow> = report.per_op.iter().map(|(op, r)| CostRow::new(op.name(), r)).collect();
    rows.push(CostRow::new("layer", &report.total));
    Ok(rows)
}

fn check_template(
    g: &Genome,
    op: OpId,
    shape: &GemmShape,
    hw: &HardwareConfig,
    template: &AcceleratorTemplate,
) -> Result<()> {
    validate(g, shape, hw, template).map_err(|v| {
        let list: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        CliError::Validation(format!("invalid genome for {op} under {}: {}", template.name(), list.join("; ")))
    })
}

pub fn cost(cfg: &ExperimentConfig, genome_path: &Path, code: FusionCode) -> Result<String> {
    let text = std::fs::read_to_string(genome_path).map_err(|e| CliError::io(genome_path, e))?;
    emit(cfg, "cost", render(&cost_rows(cfg, &text, code)?, cfg.output.format)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParetoRow {
    pub latency_cycles: u64,
    pub energy_units: f64,
    pub s2_bytes_needed: u64,
    pub fusion_code: String,
    pub genome_ref: String,
}

#[derive(Serialize)]
struct OpCost<'a> {
    op: OpId,
    genome: Option<String>,
    #[serde(flatten)]
    report: &'a CostReport,
}

#[derive(Serialize)]
struct BestReport<'a> {
    fusion_code: String,
    template: &'a str,
    dataflow_mode: samt_core::search::DataflowMode,
    seed: u64,
    s2_bytes_needed: u64,
    total: &'a CostReport,
    per_op: Vec<OpCost<'a>>,
    codes: &'a [samt_core::search::CodeSummary],
}

#[derive(Serialize)]
struct CodeRow {
    fusion_code: String,
    feasible: bool,
    latency_cycles: Option<u64>,
    energy_units: Option<f64>,
}

/// Genome file text for a layer mapping, readable by `parse_genome_file`.
pub fn genome_file(mapping: &LayerMapping) -> String {
    mapping.iter().map(|(op, g)| format!("@{}\n{g}\n", op.name())).collect()
}

pub fn run_search(cfg: &ExperimentConfig) -> Result<SearchResult> {
    let hw = cfg.hardware.resolve()?;
    let template = cfg.accelerator.resolve()?;
    Ok(full_search(&cfg.model, &hw, &template, cfg.dataflow_mode, &cfg.ga)?)
}

/// Writes pareto.csv, best.json, trace.csv, codes.csv and one genome file per
/// Pareto point into `dir`.
pub fn write_search(dir: &Path, cfg: &ExperimentConfig, r: &SearchResult) -> Result<()> {
    let mut rows = Vec::with_capacity(r.pareto.len());
    for (i, p) in r.pareto.iter().enumerate() {
        let genome_ref = format!("genomes/pareto_{i:03}.txt");
        write_atomic(&dir.join(&genome_ref), genome_file(&p.mapping).as_bytes())?;
        rows.push(ParetoRow {
            latency_cycles: p.latency_cycles,
            energy_units: p.energy_units,
            s2_bytes_needed: p.s2_bytes_needed,
            fusion_code: p.fusion_code.to_string(),
            genome_ref,
        });
    }
    write_atomic(&dir.join("pareto.csv"), csv_string(&rows)?.as_bytes())?;
    write_atomic(&dir.join("trace.csv"), csv_string(&r.trace)?.as_bytes())?;
    let codes: Vec<CodeRow> = r
        .codes
        .iter()
        .map(|c| CodeRow {
            fusion_code: c.code.to_string(),
            feasible: c.feasible,
            latency_cycles: c.latency_cycles,
            energy_units: c.energy_units,
        })
        .collect();
    write_atomic(&dir.join("codes.csv"), csv_string(&codes)?.as_bytes())?;
    let best = BestReport {
        fusion_code: r.code.to_string(),
        template: &r.template,
        dataflow_mode: r.mode,
        seed: cfg.ga.seed,
        s2_bytes_needed: r.s2_bytes_needed,
        total: &r.report.total,
        per_op: r
            .report
            .per_op
            .iter()
            .map(|(op, report)| OpCost { op: *op, genome: r.mapping.get(op).map(|g| g.to_string()), report })
            .collect(),
        codes: &r.codes,
    };
    write_atomic(&dir.join("best.json"), json_string(&best).as_bytes())?;
    write_atomic(&dir.join("best_genomes.txt"), genome_file(&r.mapping).as_bytes())
}

pub fn default_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| "samt-out".into()))
}

fn summary(r: &SearchResult) -> String {
    format!(
        "best code {} ({}): latency {} cycles, energy {:.6e}, {} Pareto point(s), {} feasible code(s)",
        r.code,
        r.template,
        r.report.total.latency_cycles,
        r.report.total.energy_units,
        r.pareto.len(),
        r.codes.iter().filter(|c| c.feasible).count()
    )
}

pub fn search(cfg: &ExperimentConfig) -> Result<String> {
    let r = run_search(cfg)?;
    let dir = default_out_dir(cfg);
    write_search(&dir, cfg, &r)?;
    Ok(format!("{}\nwrote {}\n", summary(&r), dir.display()))
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub status: String,
    pub best_code: Option<String>,
    pub latency_cycles: Option<u64>,
    pub energy_units: Option<f64>,
    pub s2_bytes_needed: Option<u64>,
    pub feasible_codes: Option<usize>,
    pub pareto_points: Option<usize>,
    pub error: Option<String>,
}

fn value_label(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One search per swept value, each in its own sub-directory; failures are
/// recorded in their row and the sweep continues.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Validation("sweep section missing".into()))?;
    let dir = default_out_dir(cfg);
    let name = sweep.parameter.name();
    let rows = sweep
        .values
        .par_iter()
        .map(|v| {
            let label = value_label(v);
            let run = || -> Result<SearchResult> {
                let sub = cfg.with_value(sweep.parameter, v)?;
                let r = run_search(&sub)?;
                write_search(&dir.join(format!("{name}_{label}")), &sub, &r)?;
                Ok(r)
            };
            match run() {
                Ok(r) => SweepRow {
                    parameter: name.into(),
                    value: label,
                    status: "ok".into(),
                    best_code: Some(r.code.to_string()),
                    latency_cycles: Some(r.report.total.latency_cycles),
                    energy_units: Some(r.report.total.energy_units),
                    s2_bytes_needed: Some(r.s2_bytes_needed),
                    feasible_codes: Some(r.codes.iter().filter(|c| c.feasible).count()),
                    pareto_points: Some(r.pareto.len()),
                    error: None,
                },
                Err(e) => SweepRow {
                    parameter: name.into(),
                    value: label,
                    status: format!("exit {}", e.exit_code()),
                    best_code: None,
                    latency_cycles: None,
                    energy_units: None,
                    s2_bytes_needed: None,
                    feasible_codes: None,
                    pareto_points: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<String> {
    let rows = sweep_rows(cfg)?;
    let text = render(&rows, cfg.output.format)?;
    let path = default_out_dir(cfg).join(format!("sweep.{}", extension(cfg.output.format)));
    write_atomic(&path, text.as_bytes())?;
    Ok(text)
}
