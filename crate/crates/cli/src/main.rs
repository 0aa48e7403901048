use clap::Parser;
use gpps_cli::commands::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    std::process::exit(execute(&cli));
}
