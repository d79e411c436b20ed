use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(smlm_cli::run(std::env::args_os()))
}
