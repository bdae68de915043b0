fn main() -> std::process::ExitCode {
    rbac_service::cli::main()
}
