//! Flat `key = value` config files. Keys are the long flag names; a flag
//! given on the command line wins over the file.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Every key a config file may set.
pub const KEYS: &[&str] = &[
    "workers",
    "data",
    "unlabeled",
    "covariates",
    "y-col",
    "r-col",
    "family",
    "method",
    "methods",
    "k",
    "alpha",
    "seed",
    "out",
    "preset",
    "scenario",
    "delta",
    "reps",
    "lambda-reg",
    "top-k",
    "restarts",
    "min-segment",
    "fitter",
    "rx-ridge",
];

#[derive(Debug, Default)]
pub struct Settings {
    file: HashMap<String, String>,
}

impl Settings {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut file = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("config line {}: expected key = value", i + 1)))?;
            let key = key.trim().replace('_', "-");
            if !KEYS.contains(&key.as_str()) {
                return Err(CliError::Config(format!("config line {}: unknown key '{key}'", i + 1)));
            }
            file.insert(key, value.trim().to_string());
        }
        Ok(Self { file })
    }

    /// The flag value if given, else the parsed file value.
    pub fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        debug_assert!(KEYS.contains(&key), "unregistered key {key}");
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("config key '{key}': {e}"))),
        }
    }

    pub fn or<T: FromStr>(&self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key, flag)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key, flag)?
            .ok_or_else(|| CliError::Config(format!("--{key} is required")))
    }
}
