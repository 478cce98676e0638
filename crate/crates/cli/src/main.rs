use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(crittree_cli::app::run_with(std::env::args_os(), &mut std::io::stdout()))
}
