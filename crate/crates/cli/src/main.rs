use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(safepg_cli::app::run(std::env::args_os()))
}
