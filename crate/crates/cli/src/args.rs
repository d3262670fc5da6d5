//! Minimal flag parser: every flag is `--name value`, unknown flags are
//! usage errors, and each command drains what it understands.

use std::collections::BTreeMap;
use std::str::FromStr;

use s3t_core::{Error, Result};

pub struct Args {
    map: BTreeMap<String, String>,
}

impl Args {
    pub fn parse(argv: &[String]) -> Result<Args> {
        let mut map = BTreeMap::new();
        let mut it = argv.iter();
        while let Some(token) = it.next() {
            let Some(name) = token.strip_prefix("--") else {
                return Err(Error::Usage(format!(
                    "unexpected argument `{token}` (flags look like --name value)"
                )));
            };
            let Some(value) = it.next() else {
                return Err(Error::Usage(format!("flag --{name} is missing its value")));
            };
            if map.insert(name.to_string(), value.clone()).is_some() {
                return Err(Error::Usage(format!("flag --{name} given twice")));
            }
        }
        Ok(Args { map })
    }

    pub fn take(&mut self, name: &str) -> Option<String> {
        self.map.remove(name)
    }

    pub fn require(&mut self, name: &str) -> Result<String> {
        self.take(name)
            .ok_or_else(|| Error::Usage(format!("missing required flag --{name}")))
    }

    pub fn take_parse<T>(&mut self, name: &str, default: T) -> Result<T>
    where
        T: FromStr,
    {
        match self.take(name) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|_| Error::Usage(format!("flag --{name}: cannot parse `{raw}`"))),
        }
    }

    pub fn require_parse<T>(&mut self, name: &str) -> Result<T>
    where
        T: FromStr,
    {
        let raw = self.require(name)?;
        raw.parse()
            .map_err(|_| Error::Usage(format!("flag --{name}: cannot parse `{raw}`")))
    }

    /// Error out if any flag was not consumed.
    pub fn finish(self) -> Result<()> {
        if let Some(name) = self.map.keys().next() {
            return Err(Error::Usage(format!("unknown flag --{name}")));
        }
        Ok(())
    }
}

/// Parse `lo:hi` (Hz) or `none`.
pub fn parse_band(raw: &str) -> Result<Option<(f64, f64)>> {
    if raw == "none" {
        return Ok(None);
    }
    let parts: Vec<&str> = raw.split(':').collect();
    if parts.len() == 2 {
        if let (Ok(lo), Ok(hi)) = (parts[0].parse(), parts[1].parse()) {
            return Ok(Some((lo, hi)));
        }
    }
    Err(Error::Usage(format!(
        "band must look like `4:40` or `none`, got `{raw}`"
    )))
}

/// Parse a comma-separated list of values.
pub fn parse_list<T>(raw: &str, what: &str) -> Result<Vec<T>>
where
    T: FromStr,
{
    raw.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::Usage(format!("{what}: cannot parse `{tok}`")))
        })
        .collect()
}
