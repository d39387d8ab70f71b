//! Flat key=value config files and flag resolution.
//!
//! Every subcommand flag can also be supplied from a `--config` file; the
//! precedence is command line > config file > built-in default. Keys use
//! the long flag names (`k-min=10`; underscores are accepted and
//! normalized). Unknown keys are usage errors, so typos do not silently
//! fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde_json::Value;

use crate::errors::{usage, CliResult};

/// Parsed `key=value` lines; `#` starts a comment.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)?;
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!(
                    "{}:{}: expected key=value, found {line:?}",
                    path.display(),
                    idx + 1
                )));
            };
            let key = key.trim().replace('_', "-");
            if values.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(usage(format!(
                    "{}:{}: duplicate key {key:?}",
                    path.display(),
                    idx + 1
                )));
            }
        }
        Ok(Self { values })
    }
}

/// How a resolved flag value is recorded in the run manifest.
pub trait ToParam {
    fn to_param(&self) -> Value;
}

macro_rules! param_via_number {
    ($($t:ty),*) => {$(
        impl ToParam for $t {
            fn to_param(&self) -> Value {
                Value::from(*self)
            }
        }
    )*};
}
param_via_number!(usize, u64, bool);

impl ToParam for f64 {
    fn to_param(&self) -> Value {
        serde_json::Number::from_f64(*self)
            .map(Value::Number)
            .unwrap_or_else(|| Value::String(self.to_string()))
    }
}

impl ToParam for String {
    fn to_param(&self) -> Value {
        Value::String(self.clone())
    }
}

impl ToParam for PathBuf {
    fn to_param(&self) -> Value {
        Value::String(self.display().to_string())
    }
}

/// Applies the precedence rules flag by flag and accumulates the resolved
/// values for the manifest. [`Resolver::finish`] rejects unconsumed keys.
pub struct Resolver {
    file: BTreeMap<String, String>,
    params: BTreeMap<String, Value>,
}

impl Resolver {
    pub fn new(file: ConfigFile) -> Self {
        Self {
            file: file.values,
            params: BTreeMap::new(),
        }
    }

    fn from_file<T>(&mut self, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.file.remove(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| usage(format!("config key {key}={raw:?}: {e}"))),
        }
    }

    fn record<T: ToParam>(&mut self, key: &str, value: &T) {
        self.params.insert(key.to_string(), value.to_param());
    }

    /// CLI flag if present, else config file, else the default.
    pub fn or_default<T>(&mut self, cli: Option<T>, key: &str, default: T) -> CliResult<T>
    where
        T: FromStr + ToParam,
        T::Err: Display,
    {
        let value = match cli {
            Some(v) => {
                self.file.remove(key);
                v
            }
            None => self.from_file(key)?.unwrap_or(default),
        };
        self.record(key, &value);
        Ok(value)
    }

    /// CLI flag or config file; missing everywhere is a usage error.
    pub fn required<T>(&mut self, cli: Option<T>, key: &str) -> CliResult<T>
    where
        T: FromStr + ToParam,
        T::Err: Display,
    {
        let value = match cli {
            Some(v) => {
                self.file.remove(key);
                v
            }
            None => self
                .from_file(key)?
                .ok_or_else(|| usage(format!("missing required flag --{key}")))?,
        };
        self.record(key, &value);
        Ok(value)
    }

    /// CLI flag or config file; absent stays absent.
    pub fn optional<T>(&mut self, cli: Option<T>, key: &str) -> CliResult<Option<T>>
    where
        T: FromStr + ToParam,
        T::Err: Display,
    {
        let value = match cli {
            Some(v) => {
                self.file.remove(key);
                Some(v)
            }
            None => self.from_file(key)?,
        };
        if let Some(v) = &value {
            self.record(key, v);
        }
        Ok(value)
    }

    /// Returns the resolved parameter set; any key left in the config file
    /// did not belong to this subcommand.
    pub fn finish(self) -> CliResult<BTreeMap<String, Value>> {
        if let Some(key) = self.file.keys().next() {
            return Err(usage(format!(
                "config key {key:?} is not a flag of this subcommand"
            )));
        }
        Ok(self.params)
    }
}
