use clap::Parser;
use spatial_bd::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(run(&cli.command));
}
