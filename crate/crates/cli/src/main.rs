use clap::Parser;

fn main() {
    let cli = eikgcrl_cli::Cli::parse();
    if let Err(e) = eikgcrl_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
