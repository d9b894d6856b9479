//! Flat dotted-key configuration.
//!
//! Files are TOML; nested tables flatten to `section.key`. Command-line
//! overrides use the same keys (`train.epochs=3`) and are applied after the
//! file, in order.

use std::path::Path;

pub use toml::Value;

use crate::arch::{catalog, ArchSpec, BlockKind, ARCH_KEYS};
use crate::error::{Error, Result};

/// Ordered `(key, value)` pairs from a file and overrides.
#[derive(Clone, Debug, Default)]
pub struct ConfigEntries {
    pub entries: Vec<(String, Value)>,
}

impl ConfigEntries {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config(format!("config parse error: {e}")))?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        Ok(ConfigEntries { entries })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Parses `key=value`; the value is read as a TOML literal, falling back
    /// to a bare string.
    pub fn push_override(&mut self, kv: &str) -> Result<()> {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| Error::config(format!("override '{kv}' is not key=value")))?;
        let raw = raw.trim();
        let value = format!("v = {raw}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_string()));
        self.entries.push((key.trim().to_string(), value));
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.entries.push((key.to_string(), value));
    }

    /// Last value for `key`, if any.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn section<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a str, &'a Value)> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _)| k.split('.').next() == Some(prefix))
            .map(|(k, v)| (k.as_str(), v))
    }

    /// Rejects any key not in `valid`.
    pub fn check_keys(&self, valid: &[&str]) -> Result<()> {
        match self.entries.iter().find(|(k, _)| !valid.contains(&k.as_str())) {
            Some((k, _)) => Err(unknown_key(k, valid.iter().copied())),
            None => Ok(()),
        }
    }

    /// Builds an architecture: `arch.base` (or `default_base`) from the
    /// catalog, then every `arch.*` / `mod.*` key in order.
    pub fn arch_spec(&self, default_base: Option<&str>) -> Result<ArchSpec> {
        let base = match self.get("arch.base") {
            Some(v) => Some(as_string("arch.base", v)?),
            None => default_base.map(str::to_string),
        };
        let mut spec = match base {
            Some(name) => catalog::get(&name)?,
            None => ArchSpec::resnet("custom", BlockKind::Basic, &[2, 2, 2, 2]),
        };
        for (k, v) in self.section("arch").chain(self.section("mod")) {
            if k != "arch.base" {
                spec.set(k, v)?;
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

pub fn unknown_key<'a>(key: &str, valid: impl Iterator<Item = &'a str>) -> Error {
    let valid: Vec<&str> = valid.collect();
    Error::config(format!("unknown key '{key}' (valid keys: {})", valid.join(", ")))
}

fn type_error(key: &str, want: &str, v: &Value) -> Error {
    Error::config(format!("{key}: expected {want}, got {v}"))
}

pub fn as_string(key: &str, v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        _ => Err(type_error(key, "a string", v)),
    }
}

pub fn as_usize(key: &str, v: &Value) -> Result<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        Value::String(s) => s.trim().parse().map_err(|_| type_error(key, "a non-negative integer", v)),
        _ => Err(type_error(key, "a non-negative integer", v)),
    }
}

pub fn as_u64(key: &str, v: &Value) -> Result<u64> {
    as_usize(key, v).map(|x| x as u64)
}

pub fn as_f64(key: &str, v: &Value) -> Result<f64> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        Value::String(s) => s.trim().parse().map_err(|_| type_error(key, "a number", v)),
        _ => Err(type_error(key, "a number", v)),
    }
}

pub fn as_bool(key: &str, v: &Value) -> Result<bool> {
    match v {
        Value::Boolean(b) => Ok(*b),
        Value::String(s) if s == "true" || s == "false" => Ok(s == "true"),
        _ => Err(type_error(key, "a boolean", v)),
    }
}

/// Accepts an array or a comma-separated string.
pub fn as_usize_list(key: &str, v: &Value) -> Result<Vec<usize>> {
    match v {
        Value::Array(items) => items.iter().map(|i| as_usize(key, i)).collect(),
        Value::String(s) => s
            .split(',')
            .filter(|p| !p.trim().is_empty())
            .map(|p| p.trim().parse().map_err(|_| type_error(key, "a list of integers", v)))
            .collect(),
        Value::Integer(_) => Ok(vec![as_usize(key, v)?]),
        _ => Err(type_error(key, "a list of integers", v)),
    }
}

pub fn as_string_list(key: &str, v: &Value) -> Result<Vec<String>> {
    match v {
        Value::Array(items) => items.iter().map(|i| as_string(key, i)).collect(),
        Value::String(s) => Ok(s.split(',').map(|p| p.trim().to_string()).filter(|p| !p.is_empty()).collect()),
        _ => Err(type_error(key, "a list of strings", v)),
    }
}

/// Every architecture key plus the `arch.base` selector.
pub fn arch_keys() -> impl Iterator<Item = &'static str> {
    ARCH_KEYS.iter().map(|(k, _)| *k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_and_override_order() {
        let mut c = ConfigEntries::from_toml_str("[arch]\nbase = \"resnet18-mod-cifar\"\n[mod]\nc = 8\n").unwrap();
        c.push_override("mod.c=4").unwrap();
        c.push_override("mod.fusion=last-k").unwrap();
        let spec = c.arch_spec(None).unwrap();
        assert_eq!(spec.c, 4);
        assert_eq!(spec.fusion, "last-k");
        assert_eq!(spec.counts, vec![2, 2, 2, 2]);
    }

    #[test]
    fn list_override_forms() {
        let mut c = ConfigEntries::default();
        c.push_override("arch.counts=[3,4,14,3]").unwrap();
        c.push_override("arch.widths=1,2,3,4").unwrap();
        assert_eq!(as_usize_list("k", c.get("arch.counts").unwrap()).unwrap(), vec![3, 4, 14, 3]);
        assert_eq!(as_usize_list("k", c.get("arch.widths").unwrap()).unwrap(), vec![1, 2, 3, 4]);
    }

    #[test]
    fn unknown_keys_listed() {
        let c = ConfigEntries::from_toml_str("[train]\nepochz = 3\n").unwrap();
        let err = c.check_keys(&["train.epochs"]).unwrap_err().to_string();
        assert!(err.contains("train.epochz") && err.contains("train.epochs"), "{err}");
    }

    #[test]
    fn bad_override() {
        assert!(ConfigEntries::default().push_override("novalue").is_err());
    }
}
