use std::process::ExitCode;

fn main() -> ExitCode {
    polsar_dcl::cli::main()
}
