use std::io;
use std::panic;
use std::process::ExitCode;

fn main() -> ExitCode {
    let result = panic::catch_unwind(|| {
        let stdout = io::stdout();
        let stderr = io::stderr();
        flushleak_cli::run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
    });
    // A panic is a broken internal invariant.
    let code = result.unwrap_or(3);
    ExitCode::from(code as u8)
}
