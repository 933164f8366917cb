use std::process::ExitCode;

fn main() -> ExitCode {
    tiny_siamese::cli::run(std::env::args_os())
}
