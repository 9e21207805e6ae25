use clap::Parser;
use tracing_subscriber::EnvFilter;

fn main() {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("RISK_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = edurisk_cli::Cli::parse();
    if let Err(e) = edurisk_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
