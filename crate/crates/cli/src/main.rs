use std::io::Write;

use clap::Parser;

use assure_cli::cli::{execute, Cli};
use assure_cli::docs::AppError;

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => fail(AppError::usage(e.to_string().trim_end())),
    };
    match execute(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            let _ = stdout.write_all(out.as_bytes());
            if !out.ends_with('\n') {
                let _ = stdout.write_all(b"\n");
            }
        }
        Err(e) => fail(e),
    }
}

fn fail(e: AppError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.category.exit_code())
}
