use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::Failure;

/// Keys a `--config` file may set. Each mirrors the long flag of the same name.
const KNOWN_KEYS: &[&str] = &[
    "n",
    "vocab",
    "seed",
    "sim-lang",
    "parallel-lines",
    "epochs",
    "lr",
    "l2",
    "mini-batch",
    "aligner",
    "jobs",
    "fail-fast",
    "f0-min",
    "f0-max",
    "yin-threshold",
];

/// `key=value` defaults overlay. Blank lines and `#` comments are ignored.
#[derive(Debug, Default)]
pub struct Overlay {
    values: BTreeMap<String, String>,
    origin: String,
}

impl Overlay {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Overlay::default());
        };
        let origin = path.display().to_string();
        let text =
            std::fs::read_to_string(path).map_err(|e| Failure::invalid(format!("cannot read config {origin}: {e}")))?;
        Self::parse(&text, &origin)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, Failure> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Failure::invalid(format!("{origin}:{}: expected key=value, got {line:?}", n + 1)));
            };
            let key = key.trim().replace('_', "-");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Failure::invalid(format!(
                    "{origin}:{}: unknown key {key:?}; known keys: {}",
                    n + 1,
                    KNOWN_KEYS.join(", ")
                )));
            }
            values.insert(key, value.trim().to_string());
        }
        Ok(Overlay { values, origin: origin.to_string() })
    }

    /// The flag value if given, else the overlay value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>, Failure>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Failure::invalid(format!("{}: bad value {raw:?} for {key}: {e}", self.origin))),
        }
    }

    /// Boolean switches: the flag turns them on, the overlay may too.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool, Failure> {
        Ok(flag || self.get::<bool>(key)?.unwrap_or(false))
    }
}
