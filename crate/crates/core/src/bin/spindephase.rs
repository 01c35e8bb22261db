fn main() -> std::process::ExitCode {
    spindephase::cli::main_entry()
}
