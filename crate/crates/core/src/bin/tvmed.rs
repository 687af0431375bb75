fn main() -> std::process::ExitCode {
    tvmed::cli::run()
}
