//! Flat `key = value` files with `[section]` headers.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = i + 1;
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::Config(format!("line {lineno}: unterminated section header")))?
                    .trim();
                if name.is_empty() || sections.contains_key(name) {
                    return Err(CliError::Config(format!("line {lineno}: empty or repeated section [{name}]")));
                }
                sections.insert(name.to_string(), BTreeMap::new());
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {lineno}: expected key = value")))?;
            let (k, v) = (k.trim(), v.trim());
            let section = current
                .as_ref()
                .ok_or_else(|| CliError::Config(format!("line {lineno}: key `{k}` outside any section")))?;
            if k.is_empty() {
                return Err(CliError::Config(format!("line {lineno}: empty key")));
            }
            let map = sections.get_mut(section).expect("section inserted on header");
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(CliError::Config(format!("line {lineno}: duplicate key `{k}` in [{section}]")));
            }
        }
        Ok(Self { sections })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn load_opt(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.sections.contains_key(name)
    }

    /// Removes a section; missing sections yield an empty one.
    pub fn take(&mut self, name: &str) -> Knobs {
        Knobs { section: name.to_string(), entries: self.sections.remove(name).unwrap_or_default() }
    }

    /// Errors on any section nobody asked for.
    pub fn finish(self) -> Result<(), CliError> {
        match self.sections.keys().next() {
            Some(name) => Err(CliError::Config(format!("unknown section [{name}]"))),
            None => Ok(()),
        }
    }
}

/// Entries of one section, consumed key by key.
#[derive(Debug)]
pub struct Knobs {
    section: String,
    entries: BTreeMap<String, String>,
}

impl Knobs {
    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|e| CliError::Config(format!("[{}] {key} = {v}: {e}", self.section))),
        }
    }

    /// Flag value if given, else the file value, else the default.
    pub fn pick<T: FromStr>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let file = self.get(key)?;
        Ok(flag.or(file).unwrap_or(default))
    }

    pub fn require<T: FromStr>(&mut self, key: &str) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::Config(format!("[{}] missing required key `{key}`", self.section)))
    }

    /// Errors on any key nobody asked for.
    pub fn finish(self) -> Result<(), CliError> {
        match self.entries.keys().next() {
            Some(k) => Err(CliError::Config(format!("[{}] unknown key `{k}`", self.section))),
            None => Ok(()),
        }
    }
}
