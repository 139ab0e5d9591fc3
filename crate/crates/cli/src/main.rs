//! `retrotube`: command-line driver for the barrier tube simulator.
//!
//! Exit status 0 on success, 2 on a configuration error, 3 when a run hit
//! its budget (a traced trajectory cut off, too little tail data), 1 on
//! other failures.

mod config;
mod output;
mod run;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;

use config::{ConfigError, Format, RunConfig};
use output::Manifest;

#[derive(Parser, Debug)]
#[command(name = "retrotube", version, about, allow_negative_numbers = true)]
struct Cli {
    /// One of: trace, exitstats, lattice-gk, compare, tail, iet, bench.
    /// May instead be given as `subcommand` in the config file.
    command: Option<String>,
    /// TOML file with any of the keys below (underscores for dashes).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    epsilon_grid: Option<Vec<f64>>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    k_min: Option<usize>,
    /// Largest k entering the total-variation distance of `compare`.
    #[arg(long)]
    k_cut: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    t_grid: Option<Vec<f64>>,
    /// Output file; without it the artifact goes to stdout and the
    /// manifest to stderr.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_format)]
    format: Option<Format>,
    #[arg(long)]
    threads: Option<usize>,
    /// Single worker thread. Results never depend on the thread count, so
    /// this only pins scheduling.
    #[arg(long)]
    deterministic: bool,
    #[arg(long)]
    y_in: Option<f64>,
    #[arg(long, conflicts_with = "slope")]
    phi: Option<f64>,
    #[arg(long)]
    slope: Option<f64>,
    #[arg(long)]
    max_events: Option<u64>,
    /// Horizon of the visit count for `tail`.
    #[arg(long)]
    s: Option<f64>,
    /// Rotation angle for `iet`.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fast-path hits timed by `bench`.
    #[arg(long)]
    hits: Option<u64>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    match s {
        "csv" => Ok(Format::Csv),
        "json" => Ok(Format::Json),
        _ => Err(format!("expected csv or json, got {s}")),
    }
}

impl Cli {
    fn flags(&self) -> RunConfig {
        RunConfig {
            subcommand: self.command.clone(),
            epsilon: self.epsilon,
            epsilon_grid: self.epsilon_grid.clone(),
            delta: self.delta,
            samples: self.samples,
            seed: self.seed,
            k_max: self.k_max,
            k_min: self.k_min,
            k_cut: self.k_cut,
            t_grid: self.t_grid.clone(),
            out: self.out.clone(),
            format: self.format,
            threads: self.threads,
            deterministic: self.deterministic.then_some(true),
            y_in: self.y_in,
            phi: self.phi,
            slope: self.slope,
            max_events: self.max_events,
            s: self.s,
            alpha: self.alpha,
            hits: self.hits,
        }
    }
}

/// `dir/name.ext` -> `dir/name.suffix.ext`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{suffix}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{suffix}"),
    };
    path.with_file_name(name)
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let resolved = (|| -> Result<_, ConfigError> {
        let mut cfg = RunConfig::default();
        let mut text = None;
        if let Some(path) = &cli.config {
            let (file_cfg, t) = RunConfig::from_file(path)?;
            cfg = file_cfg;
            text = Some(t);
        }
        cfg.overlay(&cli.flags());
        cfg.resolve(text.as_deref())
    })();
    let cfg = match resolved {
        Ok(c) => c,
        Err(e) => {
            eprintln!("retrotube: config error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cfg.0.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("retrotube: cannot size worker pool: {e}");
            return ExitCode::from(1);
        }
    }

    let start = Instant::now();
    let out = match run::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("retrotube: {e}");
            return ExitCode::from(if e.is_budget() { 3 } else { 1 });
        }
    };
    let wall = start.elapsed().as_secs_f64();

    let result = (|| -> std::io::Result<()> {
        match &cfg.0.out {
            Some(path) => {
                let mut names = Vec::new();
                for (suffix, bytes) in &out.artifacts {
                    let p = suffix.map_or_else(|| path.clone(), |s| sibling(path, s));
                    std::fs::write(&p, bytes)?;
                    names.push(p.display().to_string());
                }
                let m = Manifest::new(&cfg, wall, names, out.discards.clone(), out.summary.clone());
                let mut text = serde_json::to_vec_pretty(&m)?;
                text.push(b'\n');
                std::fs::write(manifest_path(path), text)
            }
            None => {
                let mut stdout = std::io::stdout().lock();
                for (_, bytes) in &out.artifacts {
                    stdout.write_all(bytes)?;
                }
                let m = Manifest::new(&cfg, wall, vec!["<stdout>".into()], out.discards.clone(), out.summary.clone());
                eprintln!("{}", serde_json::to_string_pretty(&m)?);
                Ok(())
            }
        }
    })();
    if let Err(e) = result {
        eprintln!("retrotube: io error: {e}");
        return ExitCode::from(1);
    }
    if out.budget_exhausted {
        eprintln!("retrotube: budget exhausted before completion");
        return ExitCode::from(3);
    }
    ExitCode::SUCCESS
}
