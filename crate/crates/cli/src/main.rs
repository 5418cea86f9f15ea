use std::process::ExitCode;

use afree_cli::{load_manifest, run, Action, Cli};
use clap::Parser;

fn configure_threads() {
    if let Some(n) = std::env::var("AFREE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads();
    let cmd = match cli.action {
        Action::Command(cmd) => cmd,
        Action::Run { manifest } => match load_manifest(&manifest) {
            Ok(cmd) => cmd,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
    };
    match run(&cmd, cli.out.as_deref()) {
        Ok(outcome) => {
            match afree_core::report::to_json_string(&outcome.report) {
                Ok(s) => print!("{s}"),
                Err(e) => eprintln!("error: {e}"),
            }
            if let Some(msg) = &outcome.message {
                eprintln!("{msg}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
