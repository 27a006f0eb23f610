fn main() -> std::process::ExitCode {
    loopkit::cli::main()
}
