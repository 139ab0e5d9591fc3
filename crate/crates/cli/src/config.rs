//! Run configuration: a TOML file overlaid by command-line flags.
//!
//! Every key of the file grammar is a field of [`RunConfig`]; unknown keys
//! are rejected with their line number.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SUBCOMMANDS: [&str; 7] = ["trace", "exitstats", "lattice-gk", "compare", "tail", "iet", "bench"];

pub const DEFAULT_EPSILON_GRID: [f64; 6] = [0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown subcommand `{0}` (expected one of: {list})", list = SUBCOMMANDS.join(", "))]
    UnknownSubcommand(String),
    #[error("no subcommand given on the command line or in the config file")]
    MissingSubcommand,
    #[error("{}: key `{key}`: {msg}", location(.line))]
    Invalid {
        key: String,
        line: Option<usize>,
        msg: String,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

fn location(line: &Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}"),
        None => "command line".to_string(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Csv => "csv",
            Format::Json => "json",
        })
    }
}

/// Settings of one run. Unset optional keys take per-subcommand defaults
/// in [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subcommand: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_cut: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,
    /// Entry height for `trace`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y_in: Option<f64>,
    /// Direction angle over pi for `trace`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    /// Direction slope for `trace`; excludes `phi`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_events: Option<u64>,
    /// Horizon of the visit count in `tail`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// Rotation angle for `iet`; without it a Haar lattice is drawn.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Hits timed by `bench` on the fast path.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hits: Option<u64>,
}

/// Writes `$dst.$f = $src.$f` for every field set in `$src`.
macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $(if $src.$f.is_some() { $dst.$f = $src.$f.clone(); })*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            match line {
                Some(l) => ConfigError::Parse(format!("line {l}: {}", e.message())),
                None => ConfigError::Parse(e.message().to_string()),
            }
        })
    }

    pub fn from_file(path: &Path) -> Result<(Self, String), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok((Self::from_toml(&text)?, text))
    }

    /// Keys set in `other` replace those here.
    pub fn overlay(&mut self, other: &RunConfig) {
        overlay!(
            self, other, subcommand, epsilon, epsilon_grid, delta, samples, seed, k_max, k_min,
            k_cut, t_grid, out, format, threads, deterministic, y_in, phi, slope, max_events, s,
            alpha, hits
        );
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config values serialize")
    }

    /// Fills per-subcommand defaults and checks every value. `source` is the
    /// config file text, used to report the line of an offending key.
    pub fn resolve(mut self, source: Option<&str>) -> Result<Resolved, ConfigError> {
        let sub = self.subcommand.clone().ok_or(ConfigError::MissingSubcommand)?;
        if !SUBCOMMANDS.contains(&sub.as_str()) {
            return Err(ConfigError::UnknownSubcommand(sub));
        }
        let bad = |key: &str, msg: String| ConfigError::Invalid {
            key: key.to_string(),
            line: source.and_then(|t| key_line(t, key)),
            msg,
        };

        let default_eps = match sub.as_str() {
            "trace" => 0.3,
            "bench" => 1e-5,
            _ => 1e-3,
        };
        let eps_given = self.epsilon.is_some();
        let epsilon = *self.epsilon.get_or_insert(default_eps);
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(bad("epsilon", format!("must lie in (0, 1), got {epsilon}")));
        }
        if sub == "exitstats" && self.epsilon_grid.is_none() {
            self.epsilon_grid = Some(if eps_given {
                vec![epsilon]
            } else {
                DEFAULT_EPSILON_GRID.to_vec()
            });
        }
        if let Some(grid) = &self.epsilon_grid {
            if grid.is_empty() || grid.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
                return Err(bad("epsilon_grid", "entries must lie in (0, 1)".into()));
            }
        }
        let delta = *self.delta.get_or_insert(0.1);
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(bad("delta", format!("must lie in (0, 1], got {delta}")));
        }
        let default_samples = match sub.as_str() {
            "tail" => 10_000_000,
            _ => 1_000_000,
        };
        if *self.samples.get_or_insert(default_samples) == 0 {
            return Err(bad("samples", "must be positive".into()));
        }
        self.seed.get_or_insert(1);
        let (kmin_default, kmax_default) = match sub.as_str() {
            "tail" => (8, 64),
            _ => (1, 1000),
        };
        let k_max = *self.k_max.get_or_insert(kmax_default);
        let k_min = *self.k_min.get_or_insert(kmin_default);
        if k_max == 0 || k_min == 0 || k_min > k_max {
            return Err(bad("k_max", format!("need 1 <= k_min <= k_max, got {k_min}..{k_max}")));
        }
        let k_cut = *self.k_cut.get_or_insert(20.min(k_max));
        if k_cut == 0 || k_cut > k_max {
            return Err(bad("k_cut", format!("must lie in 1..={k_max}, got {k_cut}")));
        }
        if sub == "exitstats" {
            self.t_grid.get_or_insert_with(default_t_grid);
        }
        let grid = self.t_grid.as_deref().unwrap_or_default();
        if grid.iter().any(|&t| !(t >= 0.0 && t.is_finite())) || grid.windows(2).any(|w| w[1] < w[0]) {
            return Err(bad("t_grid", "must be finite, nonnegative and nondecreasing".into()));
        }
        self.format.get_or_insert(Format::Csv);
        let deterministic = *self.deterministic.get_or_insert(false);
        if deterministic {
            self.threads = Some(1);
        }
        if self.threads == Some(0) {
            return Err(bad("threads", "must be positive".into()));
        }
        if sub == "trace" {
            let y = *self.y_in.get_or_insert(0.5);
            if !(y > 0.0 && y < 1.0) {
                return Err(bad("y_in", format!("must lie in (0, 1), got {y}")));
            }
            match (self.phi, self.slope) {
                (Some(_), Some(_)) => {
                    return Err(bad("slope", "give either phi or slope, not both".into()))
                }
                (Some(p), None) if !(p > -0.5 && p < 0.5) => {
                    return Err(bad("phi", format!("must lie in (-1/2, 1/2), got {p}")))
                }
                (None, Some(sl)) if !sl.is_finite() => {
                    return Err(bad("slope", format!("must be finite, got {sl}")))
                }
                (None, None) => self.phi = Some(0.1),
                _ => {}
            }
            if *self.max_events.get_or_insert(retrotube::billiard::DEFAULT_MAX_EVENTS) == 0 {
                return Err(bad("max_events", "must be positive".into()));
            }
        }
        if sub == "tail" {
            let s = *self.s.get_or_insert(1.0);
            if !(s > 0.0 && s.is_finite()) {
                return Err(bad("s", format!("must be positive, got {s}")));
            }
        }
        if let Some(a) = self.alpha {
            if !a.is_finite() {
                return Err(bad("alpha", format!("must be finite, got {a}")));
            }
        }
        if sub == "bench" && *self.hits.get_or_insert(1_000_000) == 0 {
            return Err(bad("hits", "must be positive".into()));
        }
        Ok(Resolved(self))
    }
}

/// Log-spaced grid `10^-2 .. 10^8`, ten points per decade.
pub fn default_t_grid() -> Vec<f64> {
    (0..=100).map(|i| 10f64.powf(-2.0 + i as f64 / 10.0)).collect()
}

/// Line of `key = ...` in a TOML text.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        let l = l.trim_start();
        l.strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// A validated config with every key the subcommand reads set.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved(pub RunConfig);

impl Resolved {
    pub fn subcommand(&self) -> &str {
        self.0.subcommand.as_deref().expect("resolved")
    }
    pub fn epsilon(&self) -> f64 {
        self.0.epsilon.expect("resolved")
    }
    pub fn seed(&self) -> u64 {
        self.0.seed.expect("resolved")
    }
    pub fn samples(&self) -> u64 {
        self.0.samples.expect("resolved")
    }
    pub fn format(&self) -> Format {
        self.0.format.expect("resolved")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_line() {
        let err = RunConfig::from_toml("seed = 3\nepsilonn = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "{msg}");
        assert!(msg.contains("epsilonn"), "{msg}");
    }

    #[test]
    fn out_of_range_reports_key_and_line() {
        let text = "subcommand = \"exitstats\"\n\ndelta = 2.0\n";
        let cfg = RunConfig::from_toml(text).unwrap();
        let msg = cfg.resolve(Some(text)).unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("delta"), "{msg}");
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = RunConfig::from_toml("subcommand = \"tail\"\nseed = 3\nsamples = 10\n").unwrap();
        cfg.overlay(&RunConfig {
            seed: Some(9),
            ..Default::default()
        });
        let r = cfg.resolve(None).unwrap();
        assert_eq!(r.seed(), 9);
        assert_eq!(r.samples(), 10);
        assert_eq!(r.0.k_min, Some(8));
        assert_eq!(r.0.k_max, Some(64));
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = RunConfig {
            subcommand: Some("compare".into()),
            ..Default::default()
        };
        let r = cfg.resolve(None).unwrap();
        let back = RunConfig::from_toml(&r.0.to_toml()).unwrap();
        assert_eq!(back, r.0);
    }

    #[test]
    fn deterministic_forces_one_thread() {
        let cfg = RunConfig {
            subcommand: Some("bench".into()),
            deterministic: Some(true),
            threads: Some(8),
            ..Default::default()
        };
        assert_eq!(cfg.resolve(None).unwrap().0.threads, Some(1));
    }

    #[test]
    fn unknown_subcommand_is_config_error() {
        let cfg = RunConfig {
            subcommand: Some("frobnicate".into()),
            ..Default::default()
        };
        assert!(matches!(cfg.resolve(None), Err(ConfigError::UnknownSubcommand(_))));
    }
}
