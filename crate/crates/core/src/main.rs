use std::process::ExitCode;

fn main() -> ExitCode {
    wifiloc::cli::main_with(std::env::args_os())
}
