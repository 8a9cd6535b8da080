use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use spectral_adv_cli::{run, Cli};

fn main() -> ExitCode {
    // Everything is let through here; the resolved verbosity lowers the
    // global maximum once the config is known.
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Trace)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .init();
    log::set_max_level(log::LevelFilter::Info);
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
