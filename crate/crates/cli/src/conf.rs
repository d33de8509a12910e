//! Line-oriented `key = value` config files.
//!
//! Blank lines and lines starting with `#` are skipped. Every key may appear
//! once, and every key must be consumed by the command reading the file, so
//! a misspelled key is an error rather than a silently ignored setting.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

#[derive(Debug)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
    used: RefCell<BTreeSet<String>>,
}

impl KeyValues {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let at = |m: String| CliError::Usage(format!("{}:{}: {m}", path.display(), n + 1));
            let (k, v) = line.split_once('=').ok_or_else(|| at(format!("expected key = value, found {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(at("empty key".into()));
            }
            if entries.insert(k.to_string(), (n + 1, v.to_string())).is_some() {
                return Err(at(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { path: path.to_path_buf(), entries, used: RefCell::new(BTreeSet::new()) })
    }

    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key)
    }

    fn bad(&self, line: usize, key: &str, value: &str, what: &str) -> CliError {
        CliError::Usage(format!("{}:{line}: {key} = {value:?}: {what}", self.path.display()))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v.parse().map(Some).map_err(|_| self.bad(*line, key, v, "cannot parse value")),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("{}: missing key {key:?}", self.path.display())))
    }

    /// Comma-separated list, such as `shots = 1, 4`.
    pub fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some((line, v)) => v
                .split(',')
                .map(|p| p.trim().parse().map_err(|_| self.bad(*line, key, v, "cannot parse list item")))
                .collect::<Result<_, _>>()
                .map(Some),
        }
    }

    /// Inclusive `lo, hi` range.
    pub fn range(&self, key: &str, default: (u32, u32)) -> Result<(u32, u32), CliError> {
        match self.list::<u32>(key)? {
            None => Ok(default),
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(_) => {
                let (line, v) = self.entries.get(key).expect("just read");
                Err(self.bad(*line, key, v, "expected two values `lo, hi`"))
            }
        }
    }

    /// A path value, resolved against the config file's directory.
    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        Ok(self.get::<String>(key)?.map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                self.path.parent().unwrap_or(Path::new("")).join(p)
            }
        }))
    }

    /// Fails on keys nobody asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let used = self.used.borrow();
        match self.entries.iter().find(|(k, _)| !used.contains(*k)) {
            Some((k, (line, _))) => Err(CliError::Usage(format!("{}:{line}: unknown key {k:?}", self.path.display()))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(Path::new("/cfg/run.conf"), text).unwrap()
    }

    #[test]
    fn parses_values_lists_and_paths() {
        let c = kv("# comment\nsteps = 12\n\nshots = 1, 4\nout = model.ckpt\n");
        assert_eq!(c.require::<usize>("steps").unwrap(), 12);
        assert_eq!(c.range("shots", (0, 0)).unwrap(), (1, 4));
        assert_eq!(c.path("out").unwrap().unwrap(), PathBuf::from("/cfg/model.ckpt"));
        assert_eq!(c.get_or("seed", 5u64).unwrap(), 5);
        c.finish().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        assert!(KeyValues::parse(Path::new("c"), "steps 12").is_err());
        assert!(KeyValues::parse(Path::new("c"), "a = 1\na = 2").is_err());
        let c = kv("steps = many\nstray = 1\n");
        assert!(c.get::<usize>("steps").is_err());
        assert!(c.finish().is_err());
        assert!(kv("shots = 1,2,3").range("shots", (0, 0)).is_err());
    }
}
