use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(wavecomm_cli::dispatch(std::env::args_os()))
}
