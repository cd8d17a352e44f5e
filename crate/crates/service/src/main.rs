fn main() -> std::process::ExitCode {
    holter_service::cli::main()
}
