use clap::Parser;

fn main() {
    let cli = astrec_cli::Cli::parse();
    if let Err(e) = astrec_cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(astrec_cli::exit_code(e.kind()));
    }
}
