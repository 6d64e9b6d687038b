//! Flat `key = value` config files.
//!
//! Each key names a long flag of the chosen subcommand (`epochs = 50`,
//! `no_normalize = true`). Entries are spliced into the argument list right
//! after the subcommand. A key whose flag also appears on the command line is
//! dropped, so explicit flags win.

use std::fs;
use std::path::Path;

use crate::CliError;

/// Boolean switches: `true` adds the flag, `false` leaves it out.
const SWITCHES: &[&str] = &[
    "header",
    "baseline",
    "no-normalize",
    "strict-gt",
    "fail-fast",
    "key-value",
];

pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("config line {}: expected key = value", i + 1)));
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: invalid key", i + 1)));
        }
        entries.push((key, value.trim().to_owned()));
    }
    Ok(entries)
}

fn entries_to_args(entries: Vec<(String, String)>) -> Result<Vec<String>, CliError> {
    let mut args = Vec::new();
    for (key, value) in entries {
        if SWITCHES.contains(&key.as_str()) {
            match value.as_str() {
                "true" | "yes" | "1" => args.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "config key {key}: expected true/false, got {other:?}"
                    )))
                }
            }
        } else {
            args.push(format!("--{key}={value}"));
        }
    }
    Ok(args)
}

fn given_on_command_line(argv: &[String], key: &str) -> bool {
    argv.iter().any(|a| {
        a.strip_prefix("--")
            .is_some_and(|flag| flag == key || flag.strip_prefix(key).is_some_and(|r| r.starts_with('=')))
    })
}

/// Returns `argv` with any `--config FILE` replaced by the file's entries.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, CliError> {
    let mut path = None;
    let mut rest = Vec::with_capacity(argv.len());
    let mut it = argv.into_iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            path = Some(
                it.next()
                    .ok_or_else(|| CliError::Usage("--config needs a file".into()))?,
            );
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(p.to_owned());
        } else {
            rest.push(arg);
        }
    }
    let Some(path) = path else {
        return Ok(rest);
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let entries = parse_config(&text)?
        .into_iter()
        .filter(|(key, _)| !given_on_command_line(&rest, key))
        .collect();
    let injected = entries_to_args(entries)?;
    // Position 0 is the program, position 1 the subcommand.
    let at = rest.len().min(2);
    rest.splice(at..at, injected);
    Ok(rest)
}
