use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const SEED_ENV: &str = "LIGHTPATH_SEED";

/// Flat `key = value` settings; command-line flags take precedence.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

fn normalise(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| lightpath::Error::Parse {
                    line: i + 1,
                    msg: format!("expected key = value, got `{}`", line),
                })?;
            if values.insert(normalise(k), v.trim().to_string()).is_some() {
                return Err(lightpath::Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate key `{}`", k.trim()),
                }
                .into());
            }
        }
        Ok(Settings { values })
    }

    pub fn load(file: Option<&Path>) -> Result<Self> {
        match file {
            None => Ok(Settings::default()),
            Some(f) => {
                let text = std::fs::read_to_string(f).map_err(lightpath::Error::from)?;
                Settings::parse(&text).with_context(|| format!("reading {}", f.display()))
            }
        }
    }

    fn from_file<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| anyhow!(lightpath::Error::Config(format!("{} = {}: {}", key, v, e))))
            })
            .transpose()
    }

    pub fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.from_file(key),
        }
    }

    pub fn get<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.opt(flag, key)?
            .ok_or_else(|| anyhow!(lightpath::Error::Config(format!("`{}` is required", key))))
    }

    /// Flag, then settings file, then the environment.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.opt(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| anyhow!(lightpath::Error::Config(format!("{}={} is not a seed", SEED_ENV, v)))),
            Err(_) => bail!(lightpath::Error::Config(format!(
                "a seed is required: pass --seed, set `seed` in the config file or {}",
                SEED_ENV
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let s = Settings::parse("# comment\nlr = 0.01\nd-model=16 # trailing\n\n").unwrap();
        assert_eq!(s.get::<f64>(None, "lr", 1e-3).unwrap(), 0.01);
        assert_eq!(s.get(Some(0.5), "lr", 1e-3).unwrap(), 0.5);
        assert_eq!(s.get::<usize>(None, "d_model", 64).unwrap(), 16);
        assert_eq!(s.get::<usize>(None, "layers", 4).unwrap(), 4);
        assert!(s.get::<usize>(None, "lr", 1).is_err());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Settings::parse("lr 0.1").is_err());
        assert!(Settings::parse("a=1\na=2").is_err());
    }
}
