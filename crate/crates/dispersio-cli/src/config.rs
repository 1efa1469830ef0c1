//! Flat key-value run configuration.
//!
//! A configuration file groups `key = value` lines under `[section]`
//! headers. Every `(section, key)` pair is checked against a fixed schema
//! so typos fail loudly, and command-line flags always override file
//! values. Sections map one-to-one onto subcommands, plus a `[run]`
//! section for the global output directory and seed.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Error class for malformed invocations; the process maps it to exit
/// code 2 instead of the computational exit code 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Builds a `UsageError` wrapped in `anyhow::Error`.
pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

/// Allowed `(section, keys...)` pairs. Anything else is rejected by name.
const SCHEMA: &[(&str, &[&str])] = &[
    ("run", &["out", "seed"]),
    ("pdc", &["kernel", "alpha_inf", "t_max", "times", "trials", "tol"]),
    ("build", &["density", "alpha_inf", "r_tail", "tail_nodes"]),
    ("simulate", &["system", "forcing", "dt", "t_end", "method", "dump_hidden"]),
    ("demo.oscillator", &["gamma", "R", "K", "dt", "t_end"]),
    ("demo.lorentz", &["wp", "w0", "gamma", "k", "radius", "modes", "dt", "t_end"]),
    ("demo.scalar", &["wp", "w0", "gamma", "radius", "modes", "dt", "t_end"]),
    ("roundtrip", &["model", "wp", "w0", "gamma", "radius", "modes", "probes", "etas"]),
    (
        "invert",
        &[
            "model",
            "kernel",
            "wp",
            "w0",
            "gamma",
            "sigma_min",
            "sigma_max",
            "nodes",
            "etas",
            "residual_cap",
            "alpha_inf",
        ],
    ),
];

/// Parsed configuration file: raw string values keyed by `section.key`.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
    /// Path the file was loaded from, for digesting into the summary.
    pub path: Option<PathBuf>,
}

impl ConfigFile {
    /// Loads and validates a configuration file; `None` yields an empty map.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Parses config text, enforcing the schema.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut values = BTreeMap::new();
        let mut section: Option<&str> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| usage(format!("line {}: unterminated section header `{line}`", lineno + 1)))?
                    .trim();
                let known = SCHEMA.iter().find(|(s, _)| *s == name);
                let (schema_name, _) =
                    known.ok_or_else(|| usage(format!("unknown configuration section `[{name}]`")))?;
                section = Some(schema_name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(usage(format!("line {}: expected `key = value`, got `{line}`", lineno + 1)));
            };
            let key = key.trim();
            let value = value.trim();
            let Some(section) = section else {
                return Err(usage(format!("line {}: key `{key}` appears before any [section]", lineno + 1)));
            };
            let (_, keys) = SCHEMA.iter().find(|(s, _)| *s == section).expect("validated section");
            if !keys.contains(&key) {
                return Err(usage(format!("unknown configuration key `{section}.{key}`")));
            }
            values.insert(format!("{section}.{key}"), value.to_string());
        }
        Ok(Self { values, path: None })
    }

    /// Raw string value for `section.key`, if present.
    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(&format!("{section}.{key}")).map(String::as_str)
    }
}

/// Resolves one subcommand's parameters with flag-over-file precedence.
pub struct Resolver<'a> {
    section: &'a str,
    cfg: &'a ConfigFile,
    /// Echo of every resolved parameter, for the run summary.
    pub seen: BTreeMap<String, String>,
}

impl<'a> Resolver<'a> {
    pub fn new(section: &'a str, cfg: &'a ConfigFile) -> Self {
        Self { section, cfg, seen: BTreeMap::new() }
    }

    fn lookup<T>(&mut self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.cfg.raw(self.section, key) {
                Some(raw) => Some(raw.parse::<T>().map_err(|e| {
                    usage(format!("configuration key `{}.{key}`: cannot parse `{raw}`: {e}", self.section))
                })?),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.seen.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    /// Optional value with a default.
    pub fn value<T>(&mut self, flag: Option<T>, key: &str, default: T) -> anyhow::Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        let v = self.lookup(flag, key)?.unwrap_or(default);
        self.seen.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Optional value without a default.
    pub fn optional<T>(&mut self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.lookup(flag, key)
    }

    /// Required value; a missing one is a usage error naming the flag.
    pub fn required<T>(&mut self, flag: Option<T>, key: &str, flag_name: &str) -> anyhow::Result<T>
    where
        T: FromStr + fmt::Display,
        T::Err: fmt::Display,
    {
        self.lookup(flag, key)?.ok_or_else(|| {
            usage(format!("missing required {flag_name} (or `{}.{key}` in the config file)", self.section))
        })
    }

    /// Path-valued parameter (paths are not round-tripped through Display).
    pub fn path(&mut self, flag: Option<PathBuf>, key: &str) -> Option<PathBuf> {
        let value = flag.or_else(|| self.cfg.raw(self.section, key).map(PathBuf::from));
        if let Some(p) = &value {
            self.seen.insert(key.to_string(), p.display().to_string());
        }
        value
    }

    /// Required path; missing is a usage error naming the flag.
    pub fn required_path(
        &mut self,
        flag: Option<PathBuf>,
        key: &str,
        flag_name: &str,
    ) -> anyhow::Result<PathBuf> {
        self.path(flag, key).ok_or_else(|| {
            usage(format!("missing required {flag_name} (or `{}.{key}` in the config file)", self.section))
        })
    }

    /// Boolean switch: a set flag wins, else the config key.
    pub fn switch(&mut self, flag: bool, key: &str) -> anyhow::Result<bool> {
        let v = if flag {
            true
        } else {
            match self.cfg.raw(self.section, key) {
                Some(raw) => raw.parse::<bool>().map_err(|_| {
                    usage(format!("configuration key `{}.{key}`: expected true or false, got `{raw}`", self.section))
                })?,
                None => false,
            }
        };
        self.seen.insert(key.to_string(), v.to_string());
        Ok(v)
    }

    /// Strictly positive value with a default; zero or negative is rejected.
    pub fn positive(&mut self, flag: Option<f64>, key: &str, default: f64) -> anyhow::Result<f64> {
        let v = self.value(flag, key, default)?;
        if !(v > 0.0) {
            return Err(usage(format!("`{}.{key}` must be positive, got {v}", self.section)));
        }
        Ok(v)
    }
}

/// Parses a comma-separated list of floats such as `1e-3,5e-4`.
pub fn parse_float_list(raw: &str, what: &str) -> anyhow::Result<Vec<f64>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|e| usage(format!("{what}: cannot parse `{s}` as a number: {e}")))
        })
        .collect()
}
