use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fwa_bench::Scenario;
use fwa_core::Variant;

#[derive(Debug, Parser)]
#[command(name = "fwa-kit", version, about = "Fast window attention toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Seed for inputs, weights and noise.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,

    /// Output directory for files.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a benchmark scenario and write `<scenario>.csv` / `<scenario>.json`.
    Bench(BenchArgs),
    /// Write DReLu and SoftMax attention heatmaps of a synthetic heart map.
    HeatmapDemo(HeatmapArgs),
    /// Inspect or run a backbone variant.
    Model(ModelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    AttentionRepeat,
    FawaVsPool,
    Complexity,
}

impl From<ScenarioArg> for Scenario {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::AttentionRepeat => Scenario::AttentionRepeat,
            ScenarioArg::FawaVsPool => Scenario::FawaVsPool,
            ScenarioArg::Complexity => Scenario::Complexity,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    pub scenario: ScenarioArg,

    /// Input resolution whose 1/8, 1/16 and 1/32 maps are compared (fawa-vs-pool).
    #[arg(long, default_value_t = fwa_bench::scenarios::DEFAULT_BASE)]
    pub base: usize,

    /// Use a batch of 128 for attention-repeat.
    #[arg(long = "paper-scale")]
    pub full_scale: bool,

    /// Timed iterations per measurement (at least 5).
    #[arg(long)]
    pub iters: Option<usize>,

    /// Untimed warmup runs per measurement (at least 2).
    #[arg(long)]
    pub warmup: Option<usize>,

    /// Comma-separated layer counts for attention-repeat.
    #[arg(long, value_delimiter = ',')]
    pub repeats: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Args)]
pub struct HeatmapArgs {
    /// Query pixel as `row,col`; defaults to the grid center.
    #[arg(long, value_parser = parse_pixel)]
    pub query: Option<(usize, usize)>,

    /// Half-width of the uniform noise added to the map.
    #[arg(long, default_value_t = crate::heatmap::DEFAULT_NOISE)]
    pub noise: f32,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,

    #[command(subcommand)]
    pub action: ModelAction,
}

#[derive(Debug, Clone, Subcommand)]
pub enum ModelAction {
    /// Per-stage parameter table against the reference counts, as JSON.
    Summary {
        #[arg(long, default_value_t = 224)]
        size: usize,
    },
    /// Forward a seeded random image and report output statistics.
    Infer {
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: fwa_core::Error| e.to_string())
}

fn parse_pixel(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or_else(|| format!("expected row,col, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(r)?, parse(c)?))
}
