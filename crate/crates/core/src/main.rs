use std::process::ExitCode;

fn main() -> ExitCode {
    perfvcs::cli::main_with_args(std::env::args_os())
}
