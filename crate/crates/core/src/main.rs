use clap::Parser;

fn main() {
    std::process::exit(igan::cli::run(igan::cli::Cli::parse()));
}
