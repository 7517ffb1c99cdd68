//! Flat `key = value` run configuration.
//!
//! Each subcommand declares its keys. A key without a default is required.
//! Values come from a config file (or the subcommand's built-in one) and are
//! then overridden by `--set key=value` flags. Unknown keys are rejected.

use std::str::FromStr;

use crate::CliError;

/// One accepted key; `default: None` makes it required.
#[derive(Clone, Copy, Debug)]
pub struct KeySpec {
    pub key: &'static str,
    pub default: Option<&'static str>,
}

pub const fn req(key: &'static str) -> KeySpec {
    KeySpec { key, default: None }
}

pub const fn opt(key: &'static str, default: &'static str) -> KeySpec {
    KeySpec { key, default: Some(default) }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(CliError::Usage(format!("line {}: empty key", lineno + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(CliError::Usage(format!("key `{k}` given twice")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override flag.
pub fn parse_override(s: &str) -> Result<(String, String), CliError> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(CliError::Usage(format!("override `{s}` is not `key=value`"))),
    }
}

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: &'static str,
    /// Every declared key with its resolved value, in declaration order.
    values: Vec<(&'static str, String)>,
}

impl RunConfig {
    pub fn resolve(
        command: &'static str,
        specs: &[KeySpec],
        file: Vec<(String, String)>,
        overrides: Vec<(String, String)>,
    ) -> Result<Self, CliError> {
        let mut given: Vec<(String, String)> = file;
        for (k, v) in overrides {
            match given.iter_mut().find(|(g, _)| *g == k) {
                Some(slot) => slot.1 = v,
                None => given.push((k, v)),
            }
        }
        if let Some((k, _)) = given.iter().find(|(k, _)| !specs.iter().any(|s| s.key == k)) {
            return Err(CliError::Usage(format!("unknown key `{k}` for {command}")));
        }
        let mut values = Vec::with_capacity(specs.len());
        for s in specs {
            let v = match given.iter().find(|(k, _)| k == s.key) {
                Some((_, v)) => v.clone(),
                None => match s.default {
                    Some(d) => d.to_string(),
                    None => return Err(CliError::Usage(format!("missing required key `{}` for {command}", s.key))),
                },
            };
            values.push((s.key, v));
        }
        Ok(Self { command, values })
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.as_str())
            .unwrap_or_else(|| panic!("{} reads undeclared key `{key}`", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.raw(key);
        v.parse().map_err(|_| CliError::Usage(format!("key `{key}`: cannot parse `{v}`")))
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("key `{key}`: cannot parse `{s}` in `{v}`"))))
            .collect()
    }

    /// `None` for an empty value or `auto`.
    pub fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            "" | "auto" => Ok(None),
            _ => self.get(key).map(Some),
        }
    }

    /// The config echo; feeding it back reproduces the run.
    pub fn echo(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
