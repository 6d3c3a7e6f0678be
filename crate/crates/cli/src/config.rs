//! `--config` files and the resolved-configuration echo.
//!
//! A config file holds `key=value` lines naming long flags of the
//! subcommand being run; `#` starts a comment line. The pairs are spliced
//! into the argument list right after the subcommand, except for flags the
//! command line also sets.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::Path;

use clap::{ArgAction, ArgMatches, Command, CommandFactory};

use crate::args::Cli;
use crate::{CliError, CliResult};

/// Arguments left out of the echo: they choose where output goes and how
/// fast it is produced, never what it contains.
const NOT_ECHOED: &[&str] = &["config", "threads", "out", "help", "version"];

/// Global flags that take a value, as spelled before the subcommand.
const GLOBAL_VALUED: &[&str] = &["--config", "--threads"];

pub(crate) fn merge(argv: Vec<OsString>) -> CliResult<Vec<OsString>> {
    let strs: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let Some(path) = config_path(&strs) else {
        return Ok(argv);
    };
    let root = Cli::command();
    let Some((leaf, at)) = leaf_command(&root, &strs) else {
        // no subcommand: let the parser report it
        return Ok(argv);
    };
    let text =
        std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
    let given: BTreeSet<&str> = strs[at..]
        .iter()
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split_once('=').map_or(a, |(k, _)| k))
        .collect();
    let inserted = config_args(&text, Path::new(&path), leaf, &given)?;
    let mut out = argv;
    out.splice(at..at, inserted);
    Ok(out)
}

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter().skip(1);
    let mut found = None;
    while let Some(a) = it.next() {
        if a == "--" {
            break;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            found = Some(v.to_string());
        } else if a == "--config" {
            found = it.next().cloned();
        }
    }
    found
}

/// The innermost subcommand named in `args`, and the index just after it.
fn leaf_command<'a>(root: &'a Command, args: &[String]) -> Option<(&'a Command, usize)> {
    let mut cmd = root;
    let mut at = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if GLOBAL_VALUED.contains(&a.as_str()) {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(a) {
            Some(sub) => {
                cmd = sub;
                at = Some(i + 1);
                if !sub.has_subcommands() {
                    break;
                }
            }
            None => break,
        }
        i += 1;
    }
    let at = at?;
    (cmd.get_name() != "help").then_some((cmd, at))
}

/// Flags of the config file, minus those in `given`, which the command line
/// sets itself.
fn config_args(text: &str, path: &Path, leaf: &Command, given: &BTreeSet<&str>) -> CliResult<Vec<OsString>> {
    let bad = |line: usize, msg: String| CliError::Usage(format!("{}:{line}: {msg}", path.display()));
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(bad(n + 1, format!("expected key=value, got `{line}`")));
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let Some(arg) = leaf.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(bad(n + 1, format!("unknown key `{key}` for `{}`", leaf.get_name())));
        };
        if !seen.insert(key.clone()) {
            return Err(bad(n + 1, format!("duplicate key `{key}`")));
        }
        if given.contains(key.as_str()) {
            continue;
        }
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value {
                "true" => out.push(OsString::from(format!("--{key}"))),
                "false" => {}
                _ => return Err(bad(n + 1, format!("`{key}` takes true or false, got `{value}`"))),
            }
        } else {
            out.push(OsString::from(format!("--{key}={value}")));
        }
    }
    Ok(out)
}

/// Every value the run used, defaults included, as `(flag, value)` pairs
/// in declaration order; the first pair names the subcommand.
pub(crate) fn resolved(matches: &ArgMatches) -> Vec<(String, String)> {
    let root = Cli::command();
    let mut cmd = &root;
    let mut m = matches;
    let mut names = Vec::new();
    while let Some((name, sub)) = m.subcommand() {
        names.push(name.to_string());
        cmd = cmd.find_subcommand(name).expect("matched subcommand exists");
        m = sub;
    }
    let mut out = vec![("command".to_string(), names.join(" "))];
    for arg in cmd.get_arguments() {
        let id = arg.get_id().as_str();
        if NOT_ECHOED.contains(&id) {
            continue;
        }
        let Ok(Some(raw)) = m.try_get_raw(id) else {
            continue;
        };
        let vals: Vec<String> = raw.map(|v| v.to_string_lossy().into_owned()).collect();
        let key = arg
            .get_long()
            .map(str::to_string)
            .unwrap_or_else(|| id.replace('_', "-"));
        out.push((key, vals.join(",")));
    }
    out
}
