use clap::Parser;

fn main() {
    let cli = omniloc_cli::Cli::parse();
    if let Err(e) = omniloc_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
