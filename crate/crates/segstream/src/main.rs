use std::process::ExitCode;

fn main() -> ExitCode {
    segstream::cli::run_main(std::env::args_os())
}
