use std::process::ExitCode;

fn main() -> ExitCode {
    match gazeadapt::harness::cli_dispatch() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}
