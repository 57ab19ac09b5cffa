//! Plain `key = value` configuration files and flag/file/default resolution.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

/// Every key a configuration file may set. Names match the long flags.
pub const KNOWN_KEYS: &[&str] = &[
    "input",
    "out-dir",
    "format",
    "min-users",
    "max-gap",
    "window",
    "components",
    "mad-k",
    "mad-consistency",
    "scale-floor",
    "min-history",
    "threshold-history",
    "from",
    "to",
    "residuals",
    "top",
    "last-days",
    "country",
    "start",
    "end",
    "runs",
    "seed",
    "magnitudes",
    "ramp-min",
    "ramp-max",
    "hold",
    "synthetic",
    "noise",
    "baseline-seed",
    "events",
    "flags",
    "tolerance-days",
    "url",
    "output",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("line {}: unknown key {key:?}", i + 1);
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                bail!("line {}: key {key:?} set twice", i + 1);
            }
        }
        Ok(FileConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }
}

/// Resolves settings in precedence order: flag, then file, then default.
/// The chosen values are recorded for provenance.
#[derive(Debug, Default)]
pub struct Resolver {
    file: FileConfig,
    resolved: BTreeMap<String, String>,
    print_only: bool,
}

impl Resolver {
    pub fn new(file: FileConfig) -> Self {
        Resolver {
            file,
            resolved: BTreeMap::new(),
            print_only: false,
        }
    }

    pub fn from_path(path: Option<&Path>) -> Result<Self> {
        Ok(Self::new(match path {
            Some(p) => FileConfig::load(p)?,
            None => FileConfig::default(),
        }))
    }

    fn file_value<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.file
            .get(key)
            .map(|raw| raw.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
            .transpose()
    }

    pub fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    /// Like [`Resolver::value`] for settings without a default.
    pub fn optional<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.resolved
            .insert(key.to_string(), value.as_ref().map_or_else(String::new, ToString::to_string));
        Ok(value)
    }

    /// Boolean switches: a flag can only turn the setting on.
    pub fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        self.value(key, flag.then_some(true), false)
    }

    /// Makes [`Resolver::finish`] print the configuration and stop the command.
    pub fn print_only(mut self, on: bool) -> Self {
        self.print_only = on;
        self
    }

    /// Called once everything is resolved; true means the command should stop.
    pub fn finish(&self) -> bool {
        if self.print_only {
            for (k, v) in &self.resolved {
                println!("{k}={v}");
            }
        }
        self.print_only
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.resolved
    }
}
