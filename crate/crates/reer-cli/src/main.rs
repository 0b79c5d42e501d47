use clap::Parser;
use reer_cli::{args::Cli, run, CliError};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        let code = match e {
            CliError::Usage(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
