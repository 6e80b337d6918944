fn main() -> std::process::ExitCode {
    resistance::cli::main()
}
