use clap::Parser;

fn main() {
    let cli = trafficast::cli::Cli::parse();
    if let Err(e) = trafficast::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
