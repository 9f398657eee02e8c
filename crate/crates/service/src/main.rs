use clap::Parser;

fn main() {
    if let Err(e) = dial_service::cli::run(dial_service::cli::Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
