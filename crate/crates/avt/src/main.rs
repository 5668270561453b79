use std::process::ExitCode;

fn main() -> ExitCode {
    avt::cli::main()
}
