//! Flat `key = value` configuration. Command-line flags are merged on top of
//! file values; every value keeps track of where it came from so errors can
//! point at a line or a flag.

use crate::error::CliError;
use bmec_ks::grid::GridSpec;
use serde_json::{Map, Value};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Every key accepted in a config file, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("gamma", "threshold of the bistable reaction, in (0, 1)"),
    ("a", "reaction rate"),
    ("b", "chemotactic sensitivity"),
    ("c", "attractant production rate"),
    ("e", "attractant decay rate"),
    ("d_u", "cell diffusion"),
    ("d_v", "attractant diffusion"),
    ("grid", "grid size, N or NXxNY"),
    ("h", "grid spacing"),
    ("dt", "time step"),
    ("t_end", "final time"),
    ("seed", "random seed for the initial noise"),
    ("noise", "amplitude of the initial uniform noise"),
    ("snapshot_times", "comma-separated snapshot times"),
    ("probes", "probe positions as i:j pairs, comma-separated"),
    ("record_stride", "record probes and means every this many steps"),
    ("positivity_clip", "clamp negative values after each step (true/false)"),
    ("clip_budget", "allowed total clipped mass, or 'none'"),
    ("strict_budget", "abort when the clipped mass exceeds the budget (true/false)"),
    ("gammas", "comma-separated gamma values for sweeps"),
    ("eps", "GMRES tolerance"),
    ("u_min", "density floor for reconstruction"),
    ("max_iter", "GMRES iteration cap"),
    ("interval", "time between frames, recorded as metadata"),
    ("frame_step", "time unit of the frame difference in the inverse problem"),
    ("b_from", "first b of a reduced-model scan"),
    ("b_to", "last b of a reduced-model scan"),
    ("steps", "number of b values in a scan"),
    ("out", "output directory"),
];

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    File { line: usize },
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::File { line } => write!(f, "config line {line}"),
            Source::Flag => f.write_str("command line"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, (String, Source)>,
}

impl Settings {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {line}: expected 'key = value', got '{content}'"
                )));
            };
            let key = key.trim().replace('-', "_");
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(CliError::Usage(format!("config line {line}: unknown key '{key}'")));
            }
            if s.values.contains_key(&key) {
                return Err(CliError::Usage(format!("config line {line}: duplicate key '{key}'")));
            }
            s.values.insert(key, (value.trim().to_string(), Source::File { line }));
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set_flag(&mut self, key: &str, value: impl ToString) {
        self.values.insert(key.to_string(), (value.to_string(), Source::Flag));
    }

    /// Applies a flag only if it was given.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: &Option<T>) {
        if let Some(v) = value {
            self.set_flag(key, v.to_string());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn bad<T>(&self, key: &str, why: impl fmt::Display) -> Result<T, CliError> {
        let (value, source) = &self.values[key];
        Err(CliError::Usage(format!("{source}: key '{key}' = '{value}': {why}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).or_else(|e| self.bad(key, e)),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: fmt::Display,
    {
        self.get(key)?.ok_or_else(|| {
            CliError::Usage(format!(
                "missing required setting '{key}' (pass --{} or set it in the config file)",
                key.replace('_', "-")
            ))
        })
    }

    pub fn get_list(&self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        let Some(raw) = self.raw(key) else { return Ok(None) };
        let mut out = Vec::new();
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.parse::<f64>() {
                Ok(x) => out.push(x),
                Err(e) => return self.bad(key, format!("'{part}': {e}")),
            }
        }
        Ok(Some(out))
    }

    pub fn get_probes(&self) -> Result<Option<Vec<(usize, usize)>>, CliError> {
        let Some(raw) = self.raw("probes") else { return Ok(None) };
        let mut out = Vec::new();
        for part in raw.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let parsed = part
                .split_once(':')
                .and_then(|(i, j)| Some((i.trim().parse().ok()?, j.trim().parse().ok()?)));
            match parsed {
                Some(p) => out.push(p),
                None => return self.bad("probes", format!("'{part}' is not i:j")),
            }
        }
        Ok(Some(out))
    }

    pub fn get_budget(&self, default: Option<f64>) -> Result<Option<f64>, CliError> {
        match self.raw("clip_budget") {
            None => Ok(default),
            Some(v) if v.eq_ignore_ascii_case("none") => Ok(None),
            Some(_) => self.get::<f64>("clip_budget"),
        }
    }

    pub fn get_grid(&self, default: usize) -> Result<GridSpec, CliError> {
        let h = self.get_or("h", 1.0)?;
        let (nx, ny) = match self.raw("grid") {
            None => (default, default),
            Some(raw) => {
                let lower = raw.to_ascii_lowercase();
                let parsed = match lower.split_once('x') {
                    Some((a, b)) => a.trim().parse().ok().zip(b.trim().parse().ok()),
                    None => lower.trim().parse().ok().map(|n| (n, n)),
                };
                match parsed {
                    Some(p) => p,
                    None => return self.bad("grid", "expected N or NXxNY"),
                }
            }
        };
        GridSpec::new(nx, ny, h).map_err(|e| CliError::Usage(format!("grid: {e}")))
    }

    /// Every effective setting, for the manifest.
    pub fn to_json(&self) -> Map<String, Value> {
        self.values
            .iter()
            .map(|(k, (v, _))| (k.clone(), Value::String(v.clone())))
            .collect()
    }
}

/// `--help` footer listing the config keys.
pub fn keys_help() -> String {
    let mut s = String::from("Config file keys (key = value, '#' starts a comment; flags override):\n");
    for (k, d) in KEYS {
        s.push_str(&format!("  {k:<16} {d}\n"));
    }
    s
}
