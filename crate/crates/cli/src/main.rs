use clap::Parser;
use fwa_cli::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = fwa_cli::run(&cli) {
        eprintln!("fwa-kit: {e}");
        std::process::exit(e.exit_code());
    }
}
