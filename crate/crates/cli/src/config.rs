//! Flat key=value configuration with an audit trail.
//!
//! Config files hold one `key=value` per line with `#` comments. Precedence
//! is command line > config file > built-in default; every run writes its
//! fully resolved parameter set to `run_config.txt` next to the outputs.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

/// Parsed config file (empty when none is given).
pub struct FileConfig {
    entries: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    anyhow!(
                        "{}:{}: expected key=value, got {raw:?}",
                        path.display(),
                        i + 1
                    )
                })?;
                entries.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig { entries })
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|_| anyhow!("config key {key}: bad value {raw:?}")),
        }
    }
}

/// The resolved parameters of one run, written next to its outputs.
#[derive(Default)]
pub struct ResolvedConfig {
    entries: BTreeMap<String, String>,
}

impl ResolvedConfig {
    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        for (k, v) in &self.entries {
            text.push_str(&format!("{k}={v}\n"));
        }
        let path = out_dir.join("run_config.txt");
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

/// Three-way resolution: command line beats config file beats default. The
/// chosen value is recorded in the audit config.
pub fn resolve<T: FromStr + Display + Clone>(
    audit: &mut ResolvedConfig,
    key: &str,
    cli: Option<T>,
    file: &FileConfig,
    default: T,
) -> Result<T> {
    let value = match cli {
        Some(v) => v,
        None => file.get::<T>(key)?.unwrap_or(default),
    };
    audit.set(key, &value);
    Ok(value)
}
