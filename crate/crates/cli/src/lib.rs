//! Command-line frontend. The heavy lifting lives in the library
//! crate; this one adds a unified experiment config, the reference
//! experiment protocol, and the subcommands that drive both.

pub mod commands;
pub mod config;
pub mod protocol;

use clap::Parser;
use hamball::ErrorClass;

fn exit_code(class: ErrorClass) -> i32 {
    match class {
        ErrorClass::Usage => 1,
        ErrorClass::Io => 2,
        ErrorClass::Numerical => 3,
    }
}

fn init_threads() -> hamball::Result<()> {
    let Ok(raw) = std::env::var("HAMBALL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.parse().map_err(|_| {
        hamball::Error::InvalidArgument(format!("HAMBALL_THREADS must be a positive integer, got {raw:?}"))
    })?;
    if n == 0 {
        return Err(hamball::Error::InvalidArgument(
            "HAMBALL_THREADS must be a positive integer, got \"0\"".into(),
        ));
    }
    // A second init attempt in the same process is fine; keep the pool
    // that is already running.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Parse argv, run the command, and return the process exit code.
/// Failures print one machine-readable JSON line to stderr.
pub fn run() -> i32 {
    let cli = match commands::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            // Help and version go to stdout, errors to stderr, matching
            // what clap's own exit path would do.
            e.print().ok();
            return code;
        }
    };
    let result = init_threads().and_then(|()| commands::dispatch(cli.cmd));
    match result {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            let kind = match class {
                ErrorClass::Usage => "usage",
                ErrorClass::Io => "io",
                ErrorClass::Numerical => "numerical",
            };
            eprintln!(
                "{}",
                serde_json::json!({ "error": kind, "message": e.to_string() })
            );
            exit_code(class)
        }
    }
}
