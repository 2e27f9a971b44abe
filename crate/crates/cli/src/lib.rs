//! Library half of the `fwa-kit` binary.

pub mod args;
pub mod commands;
pub mod heatmap;

pub use args::Cli;
pub use commands::CliError;

/// Runs a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        args::Command::Bench(a) => commands::cmd_bench(a, &cli.global),
        args::Command::HeatmapDemo(a) => commands::cmd_heatmap_demo(a, &cli.global),
        args::Command::Model(a) => commands::cmd_model(a, &cli.global),
    }
}
