use clap::Parser;
use dimt_cli::args::Cli;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dimt_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
