use std::process::ExitCode;

fn main() -> ExitCode {
    hypnn::cli::main_with(std::env::args_os())
}
