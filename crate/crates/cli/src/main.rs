use clap::Parser;

use sbrl_cli::{run, Cli, LawRegistry};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SBRL_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    std::process::exit(run(&cli, &LawRegistry::default()));
}
