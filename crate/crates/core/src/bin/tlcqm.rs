use clap::Parser;

fn main() {
    let cli = tlcqm::cli::Cli::parse();
    std::process::exit(tlcqm::cli::run(cli));
}
