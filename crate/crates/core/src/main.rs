use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(saddlescan::harness::cli(std::env::args_os()))
}
