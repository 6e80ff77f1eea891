use clap::Parser;

use uwt::cli::{self, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if cli.wants_deterministic() {
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    std::process::exit(cli::run(cli));
}
