fn main() -> std::process::ExitCode {
    twophase_raking::cli::run()
}
