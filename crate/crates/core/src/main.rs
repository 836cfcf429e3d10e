use clap::Parser;

fn main() {
    let cli = cast::cli::Cli::parse();
    if let Err(e) = cast::cli::run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
