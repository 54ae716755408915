use std::process::ExitCode;

fn main() -> ExitCode {
    srm_cli::run(std::env::args_os())
}
