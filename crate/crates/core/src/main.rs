use clap::Parser;

fn main() {
    let cli = slotdet::cli::Cli::parse();
    if let Err(e) = slotdet::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
