use clap::Parser;
use embcurate_cli::{dispatch, with_threads, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = with_threads(cli.threads, || dispatch(cli.command)).and_then(|r| r);
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
