use std::process::ExitCode;

fn main() -> ExitCode {
    amdi_qcka::cli::run(std::env::args_os())
}
