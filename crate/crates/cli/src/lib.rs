//! The `addconc` command line, callable in-process through [`run`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;

use clap::{CommandFactory, FromArgMatches};

use addconc_core::Error;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VERDICT_FAIL: i32 = 2;
pub const EXIT_RESOURCE: i32 = 3;

/// Variable capping the memory of sieves, convolutions and enumerations.
pub const BUDGET_ENV: &str = "ADDCONC_BUDGET_MB";

#[derive(Debug, thiserror::Error)]
pub(crate) enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_resource() => EXIT_RESOURCE,
            _ => EXIT_USAGE,
        }
    }
}

pub(crate) type CliResult<T> = std::result::Result<T, CliError>;

/// Finished output of a command.
pub(crate) struct Output {
    pub csv: String,
    pub json: serde_json::Value,
    pub failed: bool,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match config::merge(argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("addconc: {e}");
            return EXIT_USAGE;
        }
    };
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let echo = config::resolved(&matches);
    match execute(&cli, &echo) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("addconc: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli, echo: &[(String, String)]) -> CliResult<i32> {
    let threads = match cli.threads {
        Some(0) => return Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => n,
        None => rayon::current_num_threads(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {threads} threads: {e}")))?;
    let limits = commands::Limits::from_env()?;
    let (out, output) = pool.install(|| commands::dispatch(&cli.command, &limits))?;
    let text = match out.format {
        args::Format::Csv => {
            let mut s = String::new();
            for (k, v) in echo {
                s.push_str(&format!("# config.{k}={v}\n"));
            }
            s.push_str(&output.csv);
            s
        }
        args::Format::Json => {
            let config: serde_json::Map<String, serde_json::Value> = echo
                .iter()
                .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
                .collect();
            let mut s = serde_json::to_string_pretty(&serde_json::json!({
                "config": config,
                "result": output.json,
            }))
            .map_err(Error::from)?;
            s.push('\n');
            s
        }
    };
    if out.out == "-" {
        let mut stdout = std::io::stdout().lock();
        stdout.write_all(text.as_bytes())?;
        stdout.flush()?;
    } else {
        std::fs::write(&out.out, text)?;
    }
    Ok(if output.failed { EXIT_VERDICT_FAIL } else { EXIT_OK })
}
