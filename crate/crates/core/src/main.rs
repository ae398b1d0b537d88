fn main() -> std::process::ExitCode {
    rlsyn::cli::run(std::env::args_os())
}
