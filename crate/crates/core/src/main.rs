use std::process::ExitCode;

use pipechain::cli::{main_with_args, SEED_ENV};

fn main() -> ExitCode {
    ExitCode::from(main_with_args(std::env::args_os(), std::env::var(SEED_ENV).ok()))
}
