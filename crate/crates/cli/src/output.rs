//! Artifact encoding: locale-free CSV numbers and the run manifest.

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::Resolved;

/// A float with 17 significant digits, which round-trips exactly.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

/// CSV text built row by row; `#` lines carry footers.
#[derive(Default)]
pub struct Table {
    text: String,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut t = Table::default();
        t.row(header.iter().map(|s| s.to_string()));
        t
    }

    pub fn row(&mut self, cells: impl IntoIterator<Item = String>) {
        let cells: Vec<String> = cells.into_iter().collect();
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn footer(&mut self, key: &str, value: impl std::fmt::Display) {
        self.text.push_str(&format!("# {key}={value}\n"));
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.text.into_bytes()
    }
}

pub fn config_sha256(toml: &str) -> String {
    Sha256::digest(toml.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Everything needed to reproduce an artifact. `config_toml` is a complete
/// config file: `retrotube --config <file>` with it reruns the same job.
#[derive(Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: String,
    pub config_sha256: String,
    pub config_toml: String,
    pub seed: u64,
    pub samples: u64,
    pub threads: Option<usize>,
    pub deterministic: bool,
    pub y_max: f64,
    pub max_returns: usize,
    pub wall_time_seconds: f64,
    pub artifacts: Vec<String>,
    pub discards: Value,
    pub summary: Value,
}

impl Manifest {
    pub fn new(cfg: &Resolved, wall_time_seconds: f64, artifacts: Vec<String>, discards: Value, summary: Value) -> Self {
        let config_toml = cfg.0.to_toml();
        Manifest {
            tool: "retrotube",
            version: env!("CARGO_PKG_VERSION"),
            subcommand: cfg.subcommand().to_string(),
            config_sha256: config_sha256(&config_toml),
            config_toml,
            seed: cfg.seed(),
            samples: cfg.samples(),
            threads: cfg.0.threads,
            deterministic: cfg.0.deterministic.unwrap_or(false),
            y_max: retrotube::lattice::Y_MAX,
            max_returns: retrotube::experiments::MAX_RETURNS,
            wall_time_seconds,
            artifacts,
            discards,
            summary,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 123456.789, -2.5e17] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(0.7), "6.9999999999999996e-1");
    }

    #[test]
    fn table_layout() {
        let mut t = Table::new(&["k", "p"]);
        t.row(["1".to_string(), num(0.5)]);
        t.footer("tv_distance", 0.25);
        let s = String::from_utf8(t.into_bytes()).unwrap();
        assert_eq!(s, "k,p\n1,5.0000000000000000e-1\n# tv_distance=0.25\n");
    }

    #[test]
    fn sha256_of_empty_string() {
        assert_eq!(
            config_sha256(""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
