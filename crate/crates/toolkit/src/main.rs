use std::process::ExitCode;

fn main() -> ExitCode {
    flowgen::cli::main()
}
