use std::process::ExitCode;

fn main() -> ExitCode {
    belief_probe::cli::main_with_args(std::env::args_os())
}
