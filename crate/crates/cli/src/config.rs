//! Flag / config-file / default resolution. Config files are plain
//! `key = value` lines; `#` starts a comment. Flags always win.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use simusr::Error;

pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: BTreeMap<String, String>,
}

fn norm(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Resolver {
    pub fn new(config: Option<&Path>) -> Result<Self, Error> {
        let mut file = BTreeMap::new();
        if let Some(path) = config {
            let text = fs::read_to_string(path).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::NotFound(path.to_owned())
                } else {
                    Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
                }
            })?;
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("{}:{}: expected key=value", path.display(), n + 1))
                })?;
                if file.insert(norm(k), v.trim().to_string()).is_some() {
                    return Err(Error::InvalidArgument(format!(
                        "{}:{}: duplicate key `{}`",
                        path.display(),
                        n + 1,
                        k.trim()
                    )));
                }
            }
        }
        Ok(Self {
            file,
            used: BTreeSet::new(),
            resolved: BTreeMap::new(),
        })
    }

    fn lookup<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Error>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.used.insert(key.to_string());
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Error::InvalidArgument(format!("config key `{key}`: {e}"))),
            None => Ok(None),
        }
    }

    /// Flag, then config file, then `default`.
    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?.unwrap_or(default);
        self.resolved.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Like [`get`](Self::get) without a default.
    pub fn opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = self.lookup(key, flag)?;
        if let Some(v) = &v {
            self.resolved.insert(key.to_string(), v.to_string());
        }
        Ok(v)
    }

    /// Seed: flag, config file, `SIMUSR_SEED`, then 0.
    pub fn seed(&mut self, flag: Option<u64>) -> Result<u64, Error> {
        let env = match std::env::var("SIMUSR_SEED") {
            Ok(v) => Some(
                v.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::InvalidArgument(format!("SIMUSR_SEED: {e}")))?,
            ),
            Err(_) => None,
        };
        let v = self.lookup("seed", flag)?.or(env).unwrap_or(0);
        self.resolved.insert("seed".into(), v.to_string());
        Ok(v)
    }

    pub fn record(&mut self, key: &str, value: impl Display) {
        self.resolved.insert(key.to_string(), value.to_string());
    }

    /// Fails on config keys the command never asked for.
    pub fn finish(self) -> Result<BTreeMap<String, String>, Error> {
        let unknown: Vec<&String> = self.file.keys().filter(|k| !self.used.contains(*k)).collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "unknown config keys for this command: {}",
                unknown.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(self.resolved)
    }
}
