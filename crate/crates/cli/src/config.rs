//! Resolved run configuration: defaults, then `--config` file entries, then
//! explicit flags, with flags winning. The final key/value map is what the
//! manifest echoes and what the output-path hash covers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

/// Ordered key=value view of one command's configuration.
#[derive(Debug, Clone)]
pub struct Resolver {
    known: Vec<&'static str>,
    map: BTreeMap<String, String>,
}

impl Resolver {
    /// Start from the command's defaults; the key set is closed from here on.
    pub fn new(defaults: &[(&'static str, String)]) -> Self {
        Self {
            known: defaults.iter().map(|(k, _)| *k).collect(),
            map: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }

    fn check_known(&self, key: &str) -> Result<(), CliError> {
        if self.known.contains(&key) {
            Ok(())
        } else {
            Err(CliError::parse(format!(
                "unknown configuration key '{key}' (known: {})",
                self.known.join(", ")
            )))
        }
    }

    /// Layer a `key=value` config file (# comments, blank lines allowed).
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::parse(format!("config file {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::parse(format!(
                    "config file {} line {}: expected key=value, got '{raw}'",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let key = key.trim();
            self.check_known(key)?;
            self.map.insert(key.to_string(), value.trim().to_string());
        }
        Ok(())
    }

    /// Layer an explicit flag value (flags win over the file).
    pub fn set_flag<V: Display>(&mut self, key: &'static str, value: Option<V>) {
        if let Some(v) = value {
            debug_assert!(self.known.contains(&key));
            self.map.insert(key.to_string(), v.to_string());
        }
    }

    /// Set a key checked against the known set at runtime (used when one
    /// command derives another's configuration).
    pub fn set_known(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        self.check_known(key)?;
        self.map.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> &str {
        self.map
            .get(key)
            .map(|s| s.as_str())
            .unwrap_or_else(|| panic!("key '{key}' missing from defaults"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.get(key)
            .parse()
            .map_err(|e| CliError::parse(format!("bad value for '{key}': {e}")))
    }

    /// Optional value: empty string means unset.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let raw = self.get(key);
        if raw.is_empty() {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    /// Canonical serialization the output-path hash covers. `out-dir` is
    /// excluded so relocating outputs does not change identity.
    pub fn canonical_for_hash(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.map {
            if k == "out-dir" {
                continue;
            }
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Parse `start:end:step` into an inclusive grid.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::parse(format!(
            "grid must be start:end:step, got '{spec}'"
        )));
    }
    let start: f64 = parts[0]
        .parse()
        .map_err(|e| CliError::parse(format!("grid start: {e}")))?;
    let end: f64 = parts[1]
        .parse()
        .map_err(|e| CliError::parse(format!("grid end: {e}")))?;
    let step: f64 = parts[2]
        .parse()
        .map_err(|e| CliError::parse(format!("grid step: {e}")))?;
    if step <= 0.0 || end < start {
        return Err(CliError::parse(format!("bad grid '{spec}'")));
    }
    let count = ((end - start) / step).round() as usize + 1;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let v = start + step * i as f64;
        if v > end + 1e-9 {
            break;
        }
        // Round to a clean decimal so 0.1:0.7:0.1 yields 0.3, not 0.30000000000000004.
        out.push((v * 1e10).round() / 1e10);
    }
    Ok(out)
}
