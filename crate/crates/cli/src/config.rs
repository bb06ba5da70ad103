//! Settings resolution: command-line flag, then config file, then default.
//!
//! A config file is either TOML with one top-level key per long flag
//! (dashes become underscores) or a run manifest, whose `config` table holds
//! the fully resolved settings of an earlier run.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

pub struct Settings {
    file: Map<String, Value>,
    used: RefCell<BTreeSet<String>>,
    resolved: RefCell<Map<String, Value>>,
}

impl Settings {
    pub fn empty() -> Self {
        Settings {
            file: Map::new(),
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(Map::new()),
        }
    }

    /// Loads a TOML config or a JSON manifest written by `command`.
    pub fn load(path: &Path, command: &str) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("reading config {}: {e}", path.display())))?;
        let file = match serde_json::from_str::<Value>(&text) {
            Ok(Value::Object(mut manifest)) => {
                let recorded = manifest.get("command").and_then(Value::as_str).unwrap_or_default();
                if recorded != command {
                    return Err(CliError::usage(format!(
                        "manifest {} records command {recorded:?}, not {command:?}",
                        path.display()
                    )));
                }
                match manifest.remove("config") {
                    Some(Value::Object(cfg)) => cfg,
                    _ => {
                        return Err(CliError::usage(format!(
                            "manifest {} has no config table",
                            path.display()
                        )))
                    }
                }
            }
            _ => {
                let table: toml::Table =
                    toml::from_str(&text).map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
                match serde_json::to_value(table) {
                    Ok(Value::Object(m)) => m,
                    _ => return Err(CliError::usage(format!("config {} is not a table", path.display()))),
                }
            }
        };
        Ok(Settings {
            file,
            used: RefCell::new(BTreeSet::new()),
            resolved: RefCell::new(Map::new()),
        })
    }

    /// Flag value if given, else the config entry, else `default`.
    pub fn get<T: DeserializeOwned + serde::Serialize>(&self, key: &str, flag: Option<T>, default: T) -> CliResult<T> {
        let value = self.get_opt(key, flag)?.unwrap_or(default);
        self.record(key, &value)?;
        Ok(value)
    }

    fn record<T: serde::Serialize>(&self, key: &str, value: &T) -> CliResult<()> {
        let json = serde_json::to_value(value).map_err(|e| CliError::usage(format!("config key {key}: {e}")))?;
        self.resolved.borrow_mut().insert(key.to_string(), json);
        Ok(())
    }

    /// Like [`Settings::get`] without a default.
    pub fn get_opt<T: DeserializeOwned + serde::Serialize>(&self, key: &str, flag: Option<T>) -> CliResult<Option<T>> {
        self.used.borrow_mut().insert(key.to_string());
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(Value::Null) | None => None,
                Some(v) => Some(
                    serde_json::from_value(v.clone()).map_err(|e| CliError::usage(format!("config key {key}: {e}")))?,
                ),
            },
        };
        self.record(key, &value)?;
        Ok(value)
    }

    /// Like [`Settings::get_opt`] but an error when nothing supplies the key.
    pub fn require<T: DeserializeOwned + serde::Serialize>(&self, key: &str, flag: Option<T>) -> CliResult<T> {
        self.get_opt(key, flag)?.ok_or_else(|| {
            CliError::usage(format!(
                "missing --{} (flag or config key {key})",
                key.replace('_', "-")
            ))
        })
    }

    /// Fails on config keys the command never asked for, which are
    /// usually typos.
    pub fn finish(&self) -> CliResult<Map<String, Value>> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .file
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::usage(format!("unknown config keys: {}", unknown.join(", "))));
        }
        Ok(self.resolved.borrow().clone())
    }
}

/// Parses `start:step:end` into an inclusive grid.
pub fn parse_alpha_grid(spec: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::usage(format!("alpha grid {spec:?} must be start:step:end")))?;
    if nums.len() != 3 {
        return Err(CliError::usage(format!("alpha grid {spec:?} must be start:step:end")));
    }
    let grid = noma_secrecy::pipeline::alpha_grid(nums[0], nums[1], nums[2])?;
    if grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(CliError::usage(format!("alpha grid {spec:?} leaves [0, 1]")));
    }
    Ok(grid)
}
