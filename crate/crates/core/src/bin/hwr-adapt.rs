use std::process::ExitCode;

fn main() -> ExitCode {
    hwr_adapt::cli::run_from(std::env::args_os(), &mut std::io::stdout())
}
