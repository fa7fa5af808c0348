use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, Context};
use serde::de::DeserializeOwned;

/// Settings read from a plain-text `key = value` file.
///
/// Blank lines and lines starting with `#` are ignored. Keys are
/// case-sensitive; `-` and `_` are interchangeable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

fn canonical_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl ConfigFile {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key = value", i + 1))?;
            let key = canonical_key(k);
            if key.is_empty() {
                bail!("line {}: empty key", i + 1);
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::parse(&text).with_context(|| format!("in config {}", p.display()))
            }
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(&canonical_key(key)).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key {key}: {e}")))
            .transpose()
    }

    /// Value of a kebab-case enum such as `reg_mode = latent-attribute`.
    pub fn get_enum<T: DeserializeOwned>(&self, key: &str) -> anyhow::Result<Option<T>> {
        self.raw(key).map(|v| parse_enum(v).with_context(|| format!("config key {key}"))).transpose()
    }

    /// `flag` if given, else the file's value.
    pub fn pick<T: FromStr>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    /// Like [`pick`](Self::pick) but the value must be present somewhere.
    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> anyhow::Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.pick(flag, key)?
            .ok_or_else(|| anyhow!("missing --{} (or `{key}` in the config file)", key.replace('_', "-")))
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> anyhow::Result<PathBuf> {
        self.require(flag, key)
    }
}

pub fn parse_enum<T: DeserializeOwned>(s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.trim().to_string())).map_err(|e| anyhow!("{s:?}: {e}"))
}
