use clap::Parser;
use gp_hcrb::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else if cli.verbose {
        log::LevelFilter::Debug
    } else {
        log::LevelFilter::Info
    };
    env_logger::Builder::new().filter_level(level).parse_env("GP_HCRB_LOG").init();
    let code = match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("gp-hcrb: {e}");
            exit_code(e.category())
        }
    };
    std::process::exit(code);
}
