//! TOML config files. Keys are long flag names of the subcommand; a flag
//! given on the command line wins over the file, the file wins over the
//! built-in default.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgMatches, Command};

pub const CONFIG_FLAG: &str = "config";

/// Arguments to re-parse with: `args` plus a `--key=value` for every config
/// entry whose flag was not given on the command line.
pub fn merge(
    command: &Command,
    matches: &ArgMatches,
    args: Vec<OsString>,
) -> Result<Vec<OsString>, String> {
    let Some((name, sub)) = matches.subcommand() else {
        return Ok(args);
    };
    let Some(path) = sub.get_one::<std::path::PathBuf>(CONFIG_FLAG) else {
        return Ok(args);
    };
    let table = read(path)?;
    let sub_cmd = command
        .find_subcommand(name)
        .ok_or_else(|| format!("unknown subcommand {name}"))?;
    let mut extra = Vec::new();
    for (key, value) in &table {
        let arg = sub_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| format!("{}: unknown key `{key}` for `{name}`", path.display()))?;
        if key == CONFIG_FLAG {
            return Err(format!("{}: config files cannot nest", path.display()));
        }
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        match value {
            toml::Value::Boolean(true) => extra.push(format!("--{key}")),
            toml::Value::Boolean(false) => {}
            toml::Value::Array(items) => {
                let joined = items.iter().map(scalar).collect::<Result<Vec<_>, _>>()?.join(",");
                extra.push(format!("--{key}={joined}"));
            }
            other => extra.push(format!("--{key}={}", scalar(other)?)),
        }
    }
    // flags of the subcommand go after its name
    let position = args
        .iter()
        .position(|a| a.to_str() == Some(name))
        .ok_or_else(|| format!("cannot locate subcommand {name}"))?;
    let mut merged = args;
    for (offset, e) in extra.into_iter().enumerate() {
        merged.insert(position + 1 + offset, e.into());
    }
    Ok(merged)
}

fn read(path: &Path) -> Result<toml::Table, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| format!("{}: {e}", path.display()))
}

fn scalar(v: &toml::Value) -> Result<String, String> {
    match v {
        toml::Value::String(s) => Ok(s.clone()),
        toml::Value::Integer(i) => Ok(i.to_string()),
        toml::Value::Float(f) => Ok(f.to_string()),
        toml::Value::Boolean(b) => Ok(b.to_string()),
        other => Err(format!("unsupported config value {other}")),
    }
}
