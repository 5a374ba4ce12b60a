use clap::Parser;

use levyheat::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
