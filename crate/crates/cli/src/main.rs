use std::process::ExitCode;

fn main() -> ExitCode {
    stiefel_cluster_cli::run(std::env::args_os())
}
