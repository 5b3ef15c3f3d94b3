//! Sectioned key=value configuration: file values, overridden by flags, read
//! into typed settings with every problem collected before anything runs.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::str::FromStr;

use ini::Ini;

/// Sections the tool knows about; `results` is written to run metadata and
/// ignored on input so that a metadata file can be fed back as a config.
pub const SECTIONS: &[&str] = &["run", "model", "converge", "diagnostics", "ergodicity", "poisson", "simulate", "probe", "results"];

type Key = (String, String);

/// Raw string table, section → key → value.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    values: BTreeMap<Key, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let ini = Ini::load_from_str_noescape(text).map_err(|e| format!("config syntax: {e}"))?;
        let mut raw = Self::default();
        for (section, props) in ini.iter() {
            let section = section.unwrap_or("run");
            for (k, v) in props.iter() {
                raw.set(section, k, v);
            }
        }
        Ok(raw)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) {
        self.values.insert((section.trim().to_string(), key.trim().to_string()), value.trim().to_string());
    }

    /// Applies a `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), String> {
        let (path, value) = spec.split_once('=').ok_or_else(|| format!("override '{spec}' is not section.key=value"))?;
        let (section, key) = path.split_once('.').ok_or_else(|| format!("override '{spec}' needs a section.key path"))?;
        self.set(section, key, value);
        Ok(())
    }
}

/// Typed view over a [`RawConfig`] that records problems, consumed keys and
/// the effective value of every setting read.
pub struct Reader<'a> {
    raw: &'a RawConfig,
    consumed: RefCell<BTreeSet<Key>>,
    problems: RefCell<Vec<String>>,
    echo: RefCell<BTreeMap<Key, String>>,
}

impl<'a> Reader<'a> {
    pub fn new(raw: &'a RawConfig) -> Self {
        Self { raw, consumed: RefCell::default(), problems: RefCell::default(), echo: RefCell::default() }
    }

    fn lookup(&self, section: &str, key: &str) -> Option<&'a String> {
        let k = (section.to_string(), key.to_string());
        self.consumed.borrow_mut().insert(k.clone());
        self.raw.values.get(&k)
    }

    fn record(&self, section: &str, key: &str, shown: String) {
        self.echo.borrow_mut().insert((section.to_string(), key.to_string()), shown);
    }

    pub fn problem(&self, msg: impl Into<String>) {
        self.problems.borrow_mut().push(msg.into());
    }

    /// Raw value, marked as known but kept out of the echo.
    pub fn unechoed(&self, section: &str, key: &str) -> Option<String> {
        self.lookup(section, key).cloned()
    }

    /// Marks a key as known without reading it.
    pub fn ignore(&self, section: &str, key: &str) {
        self.lookup(section, key);
    }

    pub fn value<T: FromStr + Display + Clone>(&self, section: &str, key: &str, default: T) -> T {
        let v = match self.lookup(section, key) {
            None => default,
            Some(text) => match text.parse::<T>() {
                Ok(v) => v,
                Err(_) => {
                    self.problem(format!("{section}.{key}: cannot parse '{text}'"));
                    default
                }
            },
        };
        self.record(section, key, v.to_string());
        v
    }

    pub fn list(&self, section: &str, key: &str, default: &[f64]) -> Vec<f64> {
        let v = match self.lookup(section, key) {
            None => default.to_vec(),
            Some(text) => {
                let parsed: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
                match parsed {
                    Ok(v) if !v.is_empty() => v,
                    _ => {
                        self.problem(format!("{section}.{key}: cannot parse '{text}' as a comma-separated list of numbers"));
                        default.to_vec()
                    }
                }
            }
        };
        self.record(section, key, join(&v));
        v
    }

    /// Rows separated by ';', components by ','.
    pub fn rows(&self, section: &str, key: &str, default: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let v = match self.lookup(section, key) {
            None => default.to_vec(),
            Some(text) => {
                let parsed: Result<Vec<Vec<f64>>, _> = text
                    .split(';')
                    .map(|row| row.split(',').map(|s| s.trim().parse::<f64>()).collect())
                    .collect();
                match parsed {
                    Ok(v) if !v.is_empty() => v,
                    _ => {
                        self.problem(format!("{section}.{key}: cannot parse '{text}' as rows like '0.1, 0.2; 0.3, 0.4'"));
                        default.to_vec()
                    }
                }
            }
        };
        self.record(section, key, v.iter().map(|r| join(r)).collect::<Vec<_>>().join("; "));
        v
    }

    /// Problems, including unknown keys in `sections` and unknown sections.
    pub fn finish(self, sections: &[&str]) -> (Vec<String>, BTreeMap<Key, String>) {
        let consumed = self.consumed.into_inner();
        let mut problems = self.problems.into_inner();
        for (section, key) in self.raw.values.keys() {
            if !SECTIONS.contains(&section.as_str()) {
                problems.push(format!("unknown section [{section}]"));
            } else if sections.contains(&section.as_str()) && !consumed.contains(&(section.clone(), key.clone())) {
                problems.push(format!("unknown key {section}.{key}"));
            }
        }
        problems.dedup();
        (problems, self.echo.into_inner())
    }
}

pub fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}
