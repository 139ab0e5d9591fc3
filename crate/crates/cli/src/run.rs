//! Dispatch of a resolved config to the library, producing artifact bytes.

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use retrotube::billiard::{self, BilliardError, InitialCondition, Terminal};
use retrotube::experiments::{self, ExperimentError, MeasureSpec};
use retrotube::iet::{self, IetError};
use retrotube::lattice;
use retrotube::stats::Histogram;

use crate::config::{Format, Resolved};
use crate::output::{num, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Billiard(#[from] BilliardError),
    #[error(transparent)]
    Iet(#[from] IetError),
}

impl RunError {
    /// Whether the failure is a budget running out rather than a fault.
    pub fn is_budget(&self) -> bool {
        matches!(
            self,
            RunError::Experiment(ExperimentError::InsufficientData { .. })
        )
    }
}

/// Files produced by one run. The first artifact goes to the output path;
/// the others get their suffix inserted before its extension.
pub struct RunOutput {
    pub artifacts: Vec<(Option<&'static str>, Vec<u8>)>,
    pub discards: Value,
    pub summary: Value,
    /// The run completed but something stopped at its budget.
    pub budget_exhausted: bool,
}

impl RunOutput {
    fn single(bytes: Vec<u8>, discards: Value, summary: Value) -> Self {
        RunOutput {
            artifacts: vec![(None, bytes)],
            discards,
            summary,
            budget_exhausted: false,
        }
    }
}

fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("artifact serializes");
    b.push(b'\n');
    b
}

pub fn run(cfg: &Resolved) -> Result<RunOutput, RunError> {
    match cfg.subcommand() {
        "trace" => trace(cfg),
        "exitstats" => exitstats(cfg),
        "lattice-gk" => lattice_gk(cfg),
        "compare" => compare(cfg),
        "tail" => tail(cfg),
        "iet" => iet_map(cfg),
        "bench" => bench(cfg),
        other => unreachable!("subcommand {other} passed validation"),
    }
}

fn trace(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let c = &cfg.0;
    let y_in = c.y_in.expect("resolved");
    let ic = match (c.slope, c.phi) {
        (Some(s), _) => InitialCondition::from_slope(y_in, s)?,
        (None, Some(p)) => InitialCondition::new(y_in, p)?,
        (None, None) => unreachable!("resolve sets phi"),
    };
    let eps = cfg.epsilon();
    let rec = billiard::trace(&ic, eps, c.max_events.expect("resolved"))?;
    let cutoff = matches!(rec.terminal, Terminal::Cutoff { .. });
    let bytes = match cfg.format() {
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                y_in: f64,
                phi: f64,
                slope: f64,
                epsilon: f64,
                #[serde(flatten)]
                record: &'a billiard::TrajectoryRecord,
            }
            json_bytes(&Out {
                y_in: ic.y_in,
                phi: ic.phi,
                slope: ic.slope(),
                epsilon: eps,
                record: &rec,
            })
        }
        Format::Csv => {
            let mut b = Vec::new();
            rec.write_csv(&mut b).expect("writing to memory");
            b
        }
    };
    let mut out = RunOutput::single(bytes, json!({}), serde_json::to_value(rec.terminal).unwrap());
    out.budget_exhausted = cutoff;
    Ok(out)
}

fn pmf_rows(t: &mut Table, lead: &[String], h: &Histogram) {
    for (k, p) in h.rows() {
        let mut cells = lead.to_vec();
        cells.extend([k.to_string(), num(p.p), num(p.ci_low), num(p.ci_high)]);
        t.row(cells);
    }
}

fn exitstats(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let c = &cfg.0;
    let grid = c.t_grid.clone().expect("resolved");
    let mut all = Vec::new();
    for &eps in c.epsilon_grid.as_ref().expect("resolved") {
        all.push(experiments::exit_statistics(
            eps,
            c.delta.expect("resolved"),
            cfg.samples(),
            &MeasureSpec::UniformOmega,
            c.k_max.expect("resolved"),
            &grid,
            cfg.seed(),
        )?);
    }
    let discards = json!(all.iter().map(|s| json!({"epsilon": s.epsilon, "discards": s.discards})).collect::<Vec<_>>());
    let summary = json!(all
        .iter()
        .map(|s| json!({
            "epsilon": s.epsilon,
            "reversal": s.event.p,
            "certificate_violations": s.certificates.violations(),
            "audit_mismatches": s.audit.mismatches,
        }))
        .collect::<Vec<_>>());
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(json_bytes(&all), discards, summary));
    }
    let mut main = Table::new(&[
        "epsilon", "delta", "samples", "exits", "censored", "p_reversal", "ci_low", "ci_high",
        "p_reversed", "reversed_ci_low", "reversed_ci_high", "certificates_checked",
        "certificate_violations", "audit_checked", "audit_mismatches", "audit_skipped",
    ]);
    let mut pmf = Table::new(&["epsilon", "k", "p", "ci_low", "ci_high"]);
    let mut cdf = Table::new(&["epsilon", "t", "cdf"]);
    for s in &all {
        main.row([
            num(s.epsilon),
            num(s.delta),
            s.histogram.total().to_string(),
            s.event.trials.to_string(),
            s.histogram.censored.to_string(),
            num(s.event.p),
            num(s.event.ci_low),
            num(s.event.ci_high),
            num(s.reversed.p),
            num(s.reversed.ci_low),
            num(s.reversed.ci_high),
            s.certificates.checked.to_string(),
            s.certificates.violations().to_string(),
            s.audit.checked.to_string(),
            s.audit.mismatches.to_string(),
            s.audit.skipped.to_string(),
        ]);
        pmf_rows(&mut pmf, &[num(s.epsilon)], &s.histogram);
        for (t, p) in s.t_cdf.grid.iter().zip(&s.t_cdf.cdf) {
            cdf.row([num(s.epsilon), num(*t), num(*p)]);
        }
    }
    Ok(RunOutput {
        artifacts: vec![
            (None, main.into_bytes()),
            (Some("q_pmf"), pmf.into_bytes()),
            (Some("t_cdf"), cdf.into_bytes()),
        ],
        discards,
        summary,
        budget_exhausted: false,
    })
}

fn lattice_gk(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let g = experiments::limiting_g(cfg.samples(), cfg.0.k_max.expect("resolved"), cfg.seed())?;
    let discards = serde_json::to_value(g.discards).unwrap();
    let summary = json!({"tail_mass": g.histogram.tail_mass(), "censored": g.histogram.censored});
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(json_bytes(&g), discards, summary));
    }
    let mut t = Table::new(&["k", "p", "ci_low", "ci_high"]);
    pmf_rows(&mut t, &[], &g.histogram);
    t.footer("tail_mass", num(g.histogram.tail_mass()));
    t.footer("censored", g.histogram.censored);
    Ok(RunOutput::single(t.into_bytes(), discards, summary))
}

fn compare(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let c = &cfg.0;
    let cmp = experiments::compare_q_laws(
        cfg.epsilon(),
        cfg.samples(),
        c.k_max.expect("resolved"),
        c.k_cut.expect("resolved"),
        cfg.seed(),
    )?;
    let discards = json!({"dynamical": cmp.dynamical.discards, "lattice": cmp.lattice.discards});
    let summary = json!({"tv_distance": cmp.tv_distance, "k_cut": cmp.k_cut});
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(json_bytes(&cmp), discards, summary));
    }
    let mut t = Table::new(&[
        "k", "p_dyn", "dyn_ci_low", "dyn_ci_high", "p_lat", "lat_ci_low", "lat_ci_high",
    ]);
    for ((k, d), (_, l)) in cmp.dynamical.histogram.rows().into_iter().zip(cmp.lattice.histogram.rows()) {
        t.row([
            k.to_string(),
            num(d.p),
            num(d.ci_low),
            num(d.ci_high),
            num(l.p),
            num(l.ci_low),
            num(l.ci_high),
        ]);
    }
    t.footer("k_cut", cmp.k_cut);
    t.footer("tv_distance", num(cmp.tv_distance));
    Ok(RunOutput::single(t.into_bytes(), discards, summary))
}

fn tail(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let c = &cfg.0;
    let ks: Vec<u64> = (c.k_min.expect("resolved") as u64..=c.k_max.expect("resolved") as u64).collect();
    let est = experiments::tail_diagnostic(c.s.expect("resolved"), cfg.epsilon(), cfg.samples(), &ks, cfg.seed())?;
    let summary = json!({"slope": est.slope, "fitted_points": est.fitted_points});
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(json_bytes(&est), json!({}), summary));
    }
    let mut t = Table::new(&["k", "exceedance", "ci_low", "ci_high", "count"]);
    for (k, p) in est.ks.iter().zip(&est.exceedance) {
        t.row([k.to_string(), num(p.p), num(p.ci_low), num(p.ci_high), p.successes.to_string()]);
    }
    t.footer("slope", num(est.slope));
    t.footer("fitted_points", est.fitted_points);
    Ok(RunOutput::single(t.into_bytes(), json!({}), summary))
}

fn iet_map(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let (map, extra) = match cfg.0.alpha {
        Some(alpha) => match iet::induce_rotation(alpha, cfg.epsilon()) {
            Ok(m) => (m, json!({"source": "rotation", "alpha": alpha, "degenerate": false})),
            Err(IetError::Degenerate(m)) => {
                (*m, json!({"source": "rotation", "alpha": alpha, "degenerate": true}))
            }
            Err(e) => return Err(e.into()),
        },
        None => {
            let g = experiments::run_blocks(1, cfg.seed(), |rng, _, _| lattice::haar_sample(rng))
                .pop()
                .expect("one block");
            let liet = iet::lattice_iet(&g)?;
            let extra = json!({
                "source": "haar_lattice",
                "lattice": g,
                "psi": liet.psi,
                "y0": liet.y0,
                "x1": liet.x1,
                "y1": liet.y1,
            });
            (liet.iet, extra)
        }
    };
    let summary = json!({"pieces": map.pieces(), "reversing": map.is_reversing()});
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(
            json_bytes(&json!({"map": map, "origin": extra})),
            json!({}),
            summary,
        ));
    }
    let mut t = Table::new(&["piece", "start", "end", "translation", "label"]);
    let (lo, hi) = map.domain();
    let mut edges = vec![lo];
    edges.extend_from_slice(map.breaks());
    edges.push(hi);
    for i in 0..map.pieces() {
        let label = map.labels().map_or(String::new(), |l| num(l[i]));
        t.row([i.to_string(), num(edges[i]), num(edges[i + 1]), num(map.translations()[i]), label]);
    }
    Ok(RunOutput::single(t.into_bytes(), json!({}), summary))
}

fn bench(cfg: &Resolved) -> Result<RunOutput, RunError> {
    let hits = cfg.0.hits.expect("resolved") as usize;
    let naive_hits = (hits / 1000).max(100);
    let t = experiments::hit_throughput(cfg.epsilon(), naive_hits, hits)?;
    let summary = json!({
        "naive_hits_per_second": t.naive_rate(),
        "fast_hits_per_second": t.fast_rate(),
        "speedup": t.speedup(),
        "x0": experiments::BENCH_X0,
        "alpha": experiments::BENCH_ALPHA,
    });
    if cfg.format() == Format::Json {
        return Ok(RunOutput::single(json_bytes(&json!({"throughput": t, "summary": summary})), json!({}), summary));
    }
    let mut tab = Table::new(&["method", "epsilon", "hits", "seconds", "hits_per_second"]);
    tab.row(["naive".into(), num(t.epsilon), t.naive_hits.to_string(), num(t.naive_seconds), num(t.naive_rate())]);
    tab.row(["fast".into(), num(t.epsilon), t.fast_hits.to_string(), num(t.fast_seconds), num(t.fast_rate())]);
    tab.footer("speedup", num(t.speedup()));
    Ok(RunOutput::single(tab.into_bytes(), json!({}), summary))
}
