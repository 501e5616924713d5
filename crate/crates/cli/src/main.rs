use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(fieldcycle_cli::run(std::env::args_os()))
}
