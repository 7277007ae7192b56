use clap::Parser;
use cloudvol::config::Cli;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = cloudvol::run(cli) {
        log::error!("{e}");
        std::process::exit(e.exit_code());
    }
}
