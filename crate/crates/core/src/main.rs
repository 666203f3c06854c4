fn main() -> std::process::ExitCode {
    progcpr::cli::main()
}
