use clap::Parser;

fn main() {
    let cli = promptloc_cli::Cli::parse();
    if let Err(e) = promptloc_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
