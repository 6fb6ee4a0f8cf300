fn main() -> std::process::ExitCode {
    plugplay::cli::main()
}
