use std::process::ExitCode;

use sdvi_cli::{parse_args, run, ParseFailure, EXIT_USAGE};

fn main() -> ExitCode {
    let cli = match parse_args(std::env::args().collect()) {
        Ok(cli) => cli,
        Err(ParseFailure::Clap(e)) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
        Err(ParseFailure::Config(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli.mode, &cli.options) {
        Ok(summary) => {
            for file in &summary.files {
                println!("wrote {}", file.display());
            }
            if summary.warnings > 0 {
                eprintln!("{} warning(s); see the output directory", summary.warnings);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
