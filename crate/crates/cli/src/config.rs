//! Layered key = value configuration.
//!
//! A config file holds `[section]` headers over `key = value` lines.
//! Effective settings are defaults overlaid by the file overlaid by CLI
//! flags, and every command echoes its merged configuration into the run
//! directory so later stages (and reruns) resolve identical settings.
//! Execution-only knobs (worker count) are deliberately not echoed: they
//! must not change any output byte.

use std::collections::BTreeMap;
use std::path::Path;

use fcexplain::{Error, Result};

/// Section -> key -> value, kept sorted for deterministic echoes.
#[derive(Debug, Clone, Default)]
pub struct Cfg {
    values: BTreeMap<String, BTreeMap<String, String>>,
}

impl Cfg {
    pub fn set(&mut self, section: &str, key: &str, value: impl ToString) {
        self.values
            .entry(section.to_string())
            .or_default()
            .insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: ToString>(&mut self, section: &str, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set(section, key, v.to_string());
        }
    }

    pub fn overlay_file(&mut self, path: &Path) -> Result<()> {
        let content = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut section = String::new();
        for (lineno, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("{}:{}: expected 'key = value'", path.display(), lineno + 1))
            })?;
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "{}:{}: key outside any [section]",
                    path.display(),
                    lineno + 1
                )));
            }
            self.set(&section, key.trim(), value.trim());
        }
        Ok(())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(section).and_then(|m| m.get(key)).map(String::as_str)
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str> {
        self.get(section, key)
            .ok_or_else(|| Error::Config(format!("missing setting [{section}] {key}")))
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<f64> {
        let raw = self.require(section, key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{section}] {key} = '{raw}' is not a number")))
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<usize> {
        let raw = self.require(section, key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{section}] {key} = '{raw}' is not an integer")))
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<u64> {
        let raw = self.require(section, key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("[{section}] {key} = '{raw}' is not an integer")))
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<bool> {
        match self.require(section, key)? {
            "true" | "1" | "yes" | "on" => Ok(true),
            "false" | "0" | "no" | "off" => Ok(false),
            other => Err(Error::Config(format!("[{section}] {key} = '{other}' is not a boolean"))),
        }
    }

    pub fn get_usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>> {
        let raw = self.require(section, key)?;
        raw.split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| {
                    Error::Config(format!("[{section}] {key}: '{tok}' is not an integer"))
                })
            })
            .collect()
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Vec<f64>> {
        let raw = self.require(section, key)?;
        raw.split(',')
            .map(|tok| {
                tok.trim().parse().map_err(|_| {
                    Error::Config(format!("[{section}] {key}: '{tok}' is not a number"))
                })
            })
            .collect()
    }

    /// Render the merged configuration; stable ordering, reparseable.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (section, entries) in &self.values {
            out.push_str(&format!("[{section}]\n"));
            for (key, value) in entries {
                out.push_str(&format!("{key} = {value}\n"));
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }
}
