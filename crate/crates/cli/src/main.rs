use clap::{Parser, Subcommand, ValueEnum};
use samt_cli::commands::{self, Overrides};
use samt_cli::config::{ExperimentConfig, Format};
use samt_cli::error::{CliError, Result};
use samt_core::fusion::FusionCode;
use std::path::PathBuf;
use std::process::ExitCode;

/// Operator-fusion and dataflow-mapping exploration for Transformer layers.
#[derive(Parser)]
#[command(name = "samt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Subcommand)]
enum Command {
    /// FLOPs, memory traffic and arithmetic intensity per operator.
    Analyze(Common),
    /// The 64 fusion codes with memory savings and S2 feasibility.
    EnumerateFusions(Common),
    /// Cost of a layer under given genomes.
    Cost {
        #[command(flatten)]
        common: Common,
        /// Genome file; `@OpName` lines select an operator.
        #[arg(long)]
        genome: PathBuf,
        /// Fusion code, six bits.
        #[arg(long, default_value = "000000")]
        code: String,
    },
    /// Genetic mapping search over all feasible fusion codes.
    Search(Common),
    /// One search per value of the configured sweep parameter.
    Sweep(Common),
}

fn load(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    Overrides {
        out: c.out.clone(),
        format: c.format.map(|f| match f {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        }),
        seed: c.seed,
    }
    .apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Analyze(c) => commands::analyze(&load(&c)?),
        Command::EnumerateFusions(c) => commands::enumerate_fusions(&load(&c)?),
        Command::Cost { common, genome, code } => {
            let code: FusionCode =
                code.parse().map_err(|e| CliError::Validation(format!("--code: {e}")))?;
            commands::cost(&load(&common)?, &genome, code)
        }
        Command::Search(c) => commands::search(&load(&c)?),
        Command::Sweep(c) => commands::sweep(&load(&c)?),
    }
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("SAMT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // the global pool can only be set once; a failure leaves the default
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
