use clap::Parser;
use hazmatch::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error[{}]: {e}", e.code());
        std::process::exit(exit_code(&e));
    }
}
