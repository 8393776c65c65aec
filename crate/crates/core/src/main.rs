use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(predictor_backstepping::cli::run(std::env::args_os()))
}
