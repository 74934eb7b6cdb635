//! `key = value` config files, merged into argv ahead of explicit flags so
//! that flags given on the command line win.

use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

/// Parses a flat `key = value` document. `#` starts a comment line; keys may
/// use `-` or `_`; values may be double-quoted.
pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("line {}: expected `key = value`", i + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        if key.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        out.push((key, value.to_owned()));
    }
    Ok(out)
}

fn find_config(args: &[String]) -> Option<&str> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(String::as_str);
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v);
        }
    }
    None
}

/// Returns argv with config entries spliced in right after the subcommand
/// name. Keys the subcommand does not accept are skipped.
pub fn inject(cmd: &Command, args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = find_config(&args) else { return Ok(args) };
    let text = std::fs::read_to_string(Path::new(path)).with_context(|| format!("reading config {path}"))?;
    let entries = parse(&text).with_context(|| format!("in config {path}"))?;

    let Some(pos) = args.iter().position(|a| cmd.find_subcommand(a).is_some()) else {
        return Ok(args);
    };
    let sub = cmd.find_subcommand(&args[pos]).expect("found above");
    let accepts = |key: &str| {
        sub.get_arguments()
            .chain(cmd.get_arguments())
            .find(|a| a.get_long() == Some(key))
            .map(|a| a.get_action().takes_values())
    };

    let mut injected = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        match accepts(&key) {
            Some(true) => injected.push(format!("--{key}={value}")),
            Some(false) => match value.as_str() {
                "true" | "yes" | "1" => injected.push(format!("--{key}")),
                "false" | "no" | "0" => {}
                other => bail!("config key `{key}` is a switch; got `{other}`"),
            },
            None => log::debug!("config key `{key}` not used by `{}`", sub.get_name()),
        }
    }
    let mut out = args;
    out.splice(pos + 1..pos + 1, injected);
    Ok(out)
}
