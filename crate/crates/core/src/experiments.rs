//! Monte Carlo estimators for the exit laws of the tube and their lattice
//! limits.
//!
//! Samples are generated in fixed-size blocks; block `i` draws from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `i`, and block results are
//! merged in block order. Output therefore depends only on the seed and the
//! sample count, never on the number of worker threads.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::billiard::{self, ExitRecord, InitialCondition, Terminal};
use crate::iet::{self, IetError};
use crate::lattice::{self, AffineLattice, LimitExit};
use crate::rotation::{self, HitSource, RotationParams};
use crate::stats::{self, Histogram, Proportion};

pub const BLOCK_SIZE: u64 = 4096;
/// Returns followed per sample before it is reported as censored.
pub const MAX_RETURNS: usize = 1_000_000;
/// Rotation steps the naive fallback may scan per sample.
const NAIVE_STEP_LIMIT: u64 = 100_000_000_000;
/// Slopes this steep leave too few significant bits in `slope mod 1`.
const MAX_SLOPE: f64 = (1u64 << 30) as f64;
/// One sample in this many is re-traced geometrically by the reversal estimator.
pub const AUDIT_STRIDE: u64 = 100;
const AUDIT_MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("no samples requested")]
    EmptySample,
    #[error("joint law supports at most 3 times, got {0}")]
    ArityError(usize),
    #[error("fewer than {min} exceedances at every k")]
    InsufficientData { min: u64 },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
}

/// Law of the initial condition `(y_in, phi)` on `[0, 1] x [-1/2, 1/2]`.
#[derive(Clone, Default)]
pub enum MeasureSpec {
    #[default]
    UniformOmega,
    /// Density sampled by rejection under `bound`.
    Custom {
        density: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
        bound: f64,
    },
}

impl fmt::Debug for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureSpec::UniformOmega => write!(f, "UniformOmega"),
            MeasureSpec::Custom { bound, .. } => write!(f, "Custom {{ bound: {bound} }}"),
        }
    }
}

impl MeasureSpec {
    /// A custom density; checks nonnegativity on a grid, the bound, and
    /// normalisation to `1e-6` by composite Simpson quadrature.
    pub fn custom(
        density: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        bound: f64,
    ) -> Result<Self, ExperimentError> {
        const N: usize = 400;
        let weight = |i: usize| match i {
            0 | N => 1.0,
            i if i % 2 == 1 => 4.0,
            _ => 2.0,
        };
        let mut integral = 0.0;
        for i in 0..=N {
            let y = i as f64 / N as f64;
            for j in 0..=N {
                let phi = -0.5 + j as f64 / N as f64;
                let d = density(y, phi);
                if !(d >= 0.0) || d > bound {
                    return Err(ExperimentError::InvalidParams(format!(
                        "density {d} at ({y}, {phi}) outside [0, {bound}]"
                    )));
                }
                integral += weight(i) * weight(j) * d;
            }
        }
        integral /= (3.0 * N as f64).powi(2);
        if (integral - 1.0).abs() > 1e-6 {
            return Err(ExperimentError::InvalidParams(format!(
                "density integrates to {integral}, not 1"
            )));
        }
        Ok(MeasureSpec::Custom {
            density: Arc::new(density),
            bound,
        })
    }

    /// Draws an initial condition; directions `phi = 0` and `phi = -1/2`
    /// (and `y_in = 0`) are redrawn and counted in `redraws`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, redraws: &mut u64) -> InitialCondition {
        loop {
            let y: f64 = rng.random();
            let phi = rng.random::<f64>() - 0.5;
            if y == 0.0 || phi == 0.0 || phi == -0.5 {
                *redraws += 1;
                continue;
            }
            if let MeasureSpec::Custom { density, bound } = self {
                if rng.random::<f64>() * bound > density(y, phi) {
                    continue;
                }
            }
            return InitialCondition::new(y, phi).expect("drawn inside the open domain");
        }
    }
}

/// Samples set aside instead of entering an estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Discards {
    pub redrawn_directions: u64,
    pub corner_hit: u64,
    pub cutoff: u64,
    pub budget_exhausted: u64,
    pub degenerate_lattice: u64,
}

impl Discards {
    pub fn merge(&mut self, o: &Discards) {
        self.redrawn_directions += o.redrawn_directions;
        self.corner_hit += o.corner_hit;
        self.cutoff += o.cutoff;
        self.budget_exhausted += o.budget_exhausted;
        self.degenerate_lattice += o.degenerate_lattice;
    }
}

/// A completed exit computed from the rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExitSample {
    pub ic: InitialCondition,
    pub q: usize,
    pub odd_sum: u64,
    pub record: ExitRecord,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Outcome {
    Exit(ExitSample),
    /// No exit within `MAX_RETURNS` returns.
    Censored,
    /// Slope too steep for the rotation angle to be resolved.
    Unresolved,
}

/// Follows the return times of one trajectory until the alternating sum
/// `n_1 - n_2 + ...` first becomes nonpositive.
pub fn simulate_exit(ic: &InitialCondition, epsilon: f64, max_returns: usize) -> Outcome {
    if ic.slope().abs() >= MAX_SLOPE {
        return Outcome::Unresolved;
    }
    let params = match RotationParams::new(ic.y_in, ic.slope(), epsilon) {
        Ok(p) => p,
        Err(_) => return Outcome::Unresolved,
    };
    let mut source = HitSource::new(params);
    let mut prev = 0u64;
    let mut sum = 0i64;
    let mut odd_sum = 0u64;
    for j in 1..=max_returns {
        let Some(l) = source.next_hit(NAIVE_STEP_LIMIT) else {
            return Outcome::Unresolved;
        };
        let n = l - prev;
        prev = l;
        if j % 2 == 1 {
            sum += n as i64;
            odd_sum += n;
        } else {
            sum -= n as i64;
            if sum <= 0 {
                let q = j - 1;
                let record = billiard::exit_record_from_parts(ic, q, odd_sum)
                    .expect("exit index is odd");
                return Outcome::Exit(ExitSample {
                    ic: *ic,
                    q,
                    odd_sum,
                    record,
                });
            }
        }
    }
    Outcome::Censored
}

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Runs `f(rng, first_index, len)` on consecutive blocks of `samples` and
/// returns the per-block results in block order.
pub fn run_blocks<T, F>(samples: u64, seed: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng, u64, u64) -> T + Sync,
{
    let blocks = samples.div_ceil(BLOCK_SIZE);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let start = b * BLOCK_SIZE;
            let len = BLOCK_SIZE.min(samples - start);
            let mut rng = block_rng(seed, b);
            f(&mut rng, start, len)
        })
        .collect()
}

/// Draws `samples` initial conditions and folds their exit outcomes into
/// an accumulator, block by block.
fn fold_exits<A, F>(
    epsilon: f64,
    samples: u64,
    measure: &MeasureSpec,
    seed: u64,
    init: impl Fn() -> A + Sync,
    add: F,
    merge: impl Fn(&mut A, A),
) -> (A, Discards)
where
    A: Send,
    F: Fn(&mut A, u64, &Outcome) + Sync,
{
    let parts = run_blocks(samples, seed, |rng, start, len| {
        let mut acc = init();
        let mut d = Discards::default();
        for i in 0..len {
            let ic = measure.sample(rng, &mut d.redrawn_directions);
            let out = simulate_exit(&ic, epsilon, MAX_RETURNS);
            match out {
                Outcome::Exit(_) => {}
                Outcome::Censored | Outcome::Unresolved => d.budget_exhausted += 1,
            }
            add(&mut acc, start + i, &out);
        }
        (acc, d)
    });
    let mut total = init();
    let mut discards = Discards::default();
    for (a, d) in parts {
        merge(&mut total, a);
        discards.merge(&d);
    }
    (total, discards)
}

/// Geometric re-check of a subsample of exits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Audit {
    pub checked: u64,
    pub mismatches: u64,
    pub skipped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReversalEstimate {
    pub epsilon: f64,
    pub delta: f64,
    /// Reversed and `|y_out - y_in| < delta`.
    pub event: Proportion,
    /// Reversed, whatever the exit height.
    pub reversed: Proportion,
    pub discards: Discards,
    pub audit: Audit,
}

#[derive(Clone, Copy, Default)]
struct ReversalAcc {
    event: u64,
    reversed: u64,
    trials: u64,
    audit: Audit,
}

/// Probability of an exactly reversed exit within `delta` of the entry.
pub fn estimate_reversal(
    epsilon: f64,
    delta: f64,
    samples: u64,
    measure: &MeasureSpec,
    seed: u64,
) -> Result<ReversalEstimate, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ExperimentError::InvalidParams(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    let (acc, discards) = fold_exits(
        epsilon,
        samples,
        measure,
        seed,
        ReversalAcc::default,
        |acc, index, out| {
            let Outcome::Exit(s) = out else { return };
            acc.trials += 1;
            let rev = s.record.reversed;
            acc.reversed += u64::from(rev);
            acc.event += u64::from(rev && (s.record.y_out - s.ic.y_in).abs() < delta);
            if index % AUDIT_STRIDE == 0 {
                audit_exit(s, epsilon, &mut acc.audit);
            }
        },
        |a, b| {
            a.event += b.event;
            a.reversed += b.reversed;
            a.trials += b.trials;
            a.audit.checked += b.audit.checked;
            a.audit.mismatches += b.audit.mismatches;
            a.audit.skipped += b.audit.skipped;
        },
    );
    Ok(ReversalEstimate {
        epsilon,
        delta,
        event: Proportion::new(acc.event, acc.trials),
        reversed: Proportion::new(acc.reversed, acc.trials),
        discards,
        audit: acc.audit,
    })
}

fn audit_exit(s: &ExitSample, epsilon: f64, audit: &mut Audit) {
    match billiard::trace_summary(&s.ic, epsilon, AUDIT_MAX_EVENTS) {
        Ok(rec) => match rec.terminal {
            Terminal::Exit(e) => {
                audit.checked += 1;
                let agree = e.q == s.q
                    && e.reversed == s.record.reversed
                    && (e.y_out - s.record.y_out).abs() < 1e-9;
                audit.mismatches += u64::from(!agree);
            }
            Terminal::Cutoff { .. } => audit.skipped += 1,
        },
        Err(_) => audit.skipped += 1,
    }
}

/// Reversal estimates over a grid of window sizes.
pub fn reversal_sweep(
    epsilons: &[f64],
    delta: f64,
    samples: u64,
    measure: &MeasureSpec,
    seed: u64,
) -> Result<Vec<ReversalEstimate>, ExperimentError> {
    epsilons
        .iter()
        .map(|&e| estimate_reversal(e, delta, samples, measure, seed))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PmfEstimate {
    pub histogram: Histogram,
    pub discards: Discards,
}

/// Empirical law of the number of barrier reflections before exit.
pub fn estimate_q_pmf(
    epsilon: f64,
    samples: u64,
    measure: &MeasureSpec,
    k_max: usize,
    seed: u64,
) -> Result<PmfEstimate, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let (histogram, discards) = fold_exits(
        epsilon,
        samples,
        measure,
        seed,
        || Histogram::new(k_max),
        |h, _, out| match out {
            Outcome::Exit(s) => h.record(s.q),
            Outcome::Censored => h.record_censored(),
            Outcome::Unresolved => {}
        },
        |a, b| a.merge(&b),
    );
    Ok(PmfEstimate {
        histogram,
        discards,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdfEstimate {
    pub grid: Vec<f64>,
    /// Fraction of all resolved samples with `eps T < t`.
    pub cdf: Vec<f64>,
    pub total: u64,
    /// Samples without an exit within the return budget, counted in `total`.
    pub censored: u64,
    pub discards: Discards,
}

/// Empirical CDF of the rescaled exit time `eps T` on a grid.
pub fn estimate_t_cdf(
    epsilon: f64,
    samples: u64,
    measure: &MeasureSpec,
    grid: &[f64],
    seed: u64,
) -> Result<CdfEstimate, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(ExperimentError::InvalidParams("grid must be nondecreasing".into()));
    }
    let len = grid.len();
    let ((counts, total, censored), discards) = fold_exits(
        epsilon,
        samples,
        measure,
        seed,
        || (vec![0u64; len], 0u64, 0u64),
        |(c, total, cens), _, out| match out {
            Outcome::Exit(s) => {
                *total += 1;
                let et = epsilon * s.record.t;
                let first = grid.partition_point(|&t| t <= et);
                for x in &mut c[first..] {
                    *x += 1;
                }
            }
            Outcome::Censored => {
                *total += 1;
                *cens += 1;
            }
            Outcome::Unresolved => {}
        },
        |a, b| {
            for (x, y) in a.0.iter_mut().zip(&b.0) {
                *x += y;
            }
            a.1 += b.1;
            a.2 += b.2;
        },
    );
    let cdf = counts.iter().map(|&c| c as f64 / total.max(1) as f64).collect();
    Ok(CdfEstimate {
        grid: grid.to_vec(),
        cdf,
        total,
        censored,
        discards,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailEstimate {
    pub ks: Vec<u64>,
    /// `P{N >= k}` for each `k`.
    pub exceedance: Vec<Proportion>,
    /// Least-squares slope of `ln P{N >= k}` against `ln k` over the `k`
    /// whose exceedance counts reach the minimum.
    pub slope: f64,
    pub fitted_points: usize,
}

pub const TAIL_MIN_COUNT: u64 = 100;

/// Exceedance probabilities of the window-visit count `N_eps(x, alpha, s)`
/// for uniform `(x, alpha)`, with a power-law fit.
pub fn tail_diagnostic(
    s: f64,
    epsilon: f64,
    samples: u64,
    ks: &[u64],
    seed: u64,
) -> Result<TailEstimate, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let k_top = ks.iter().copied().max().unwrap_or(0);
    let limit = (s / epsilon).floor() as u64;
    // Histogram of min(N, k_top).
    let parts = run_blocks(samples, seed, |rng, _, len| {
        let mut h = vec![0u64; k_top as usize + 1];
        for _ in 0..len {
            let x: f64 = rng.random();
            let alpha: f64 = rng.random();
            let p = RotationParams::from_alpha(x, alpha, epsilon).expect("valid window");
            let mut src = HitSource::new(p);
            let mut n = 0u64;
            while n < k_top && src.next_hit(limit).is_some() {
                n += 1;
            }
            h[n as usize] += 1;
        }
        h
    });
    let mut hist = vec![0u64; k_top as usize + 1];
    for p in parts {
        for (a, b) in hist.iter_mut().zip(p) {
            *a += b;
        }
    }
    let exceed = |k: u64| hist[k as usize..].iter().sum::<u64>();
    let exceedance: Vec<Proportion> = ks.iter().map(|&k| Proportion::new(exceed(k), samples)).collect();
    let pts: Vec<(f64, f64)> = ks
        .iter()
        .zip(&exceedance)
        .filter(|(_, p)| p.successes >= TAIL_MIN_COUNT)
        .map(|(&k, p)| (k as f64, p.p))
        .collect();
    let slope = stats::loglog_slope(&pts).ok_or(ExperimentError::InsufficientData {
        min: TAIL_MIN_COUNT,
    })?;
    Ok(TailEstimate {
        ks: ks.to_vec(),
        exceedance,
        slope,
        fitted_points: pts.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JointEstimate {
    pub times: Vec<f64>,
    /// `P{eps m_k > t_k for all k}` for uniform `(x, alpha)`.
    pub dynamical: Proportion,
    /// `P{#(Z^2 g in R(t_k)) <= k - 1 for all k}` for Haar-random `g`.
    pub lattice: Proportion,
}

/// Joint law of the first rescaled hitting times and its lattice limit.
pub fn joint_hit_cdf(
    epsilon: f64,
    samples: u64,
    times: &[f64],
    seed: u64,
) -> Result<JointEstimate, ExperimentError> {
    if times.len() > 3 {
        return Err(ExperimentError::ArityError(times.len()));
    }
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let n = times.len();
    let dynamical: u64 = run_blocks(samples, seed, |rng, _, len| {
        let mut hits = 0u64;
        for _ in 0..len {
            let x: f64 = rng.random();
            let alpha: f64 = rng.random();
            let p = RotationParams::from_alpha(x, alpha, epsilon).expect("valid window");
            let mut src = HitSource::new(p);
            let mut ok = true;
            for &t in times {
                // eps m_k > t  <=>  m_k > floor(t / eps)
                let limit = (t / epsilon).floor().max(0.0) as u64;
                if src.next_hit(limit).is_some() {
                    ok = false;
                    break;
                }
            }
            hits += u64::from(ok);
        }
        hits
    })
    .into_iter()
    .sum();
    let lattice: u64 = run_blocks(samples, seed ^ 0x5eed_1a77, |rng, _, len| {
        let mut hits = 0u64;
        for _ in 0..len {
            let g = lattice::haar_sample(rng);
            let ok = (0..n).all(|k| lattice::count_in_rect(&g, times[k]) <= k as u64);
            hits += u64::from(ok);
        }
        hits
    })
    .into_iter()
    .sum();
    Ok(JointEstimate {
        times: times.to_vec(),
        dynamical: Proportion::new(dynamical, samples),
        lattice: Proportion::new(lattice, samples),
    })
}

/// Limit exit index of a lattice, read off its return exchange and followed
/// for at most `MAX_RETURNS` tube points like the dynamical samples.
pub fn limit_exit(g: &AffineLattice) -> Result<LimitExit, IetError> {
    let liet = iet::lattice_iet(g)?;
    Ok(match iet::exit_crossing(&liet, MAX_RETURNS + 1)? {
        Some(k) => LimitExit::Exit(k - 1),
        None => LimitExit::Censored,
    })
}

/// Monte Carlo law of the limit exit index over Haar-random lattices.
pub fn limiting_g(samples: u64, k_max: usize, seed: u64) -> Result<PmfEstimate, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let parts = run_blocks(samples, seed, |rng, _, len| {
        let mut h = Histogram::new(k_max);
        let mut d = Discards::default();
        for _ in 0..len {
            let g = lattice::haar_sample(rng);
            match limit_exit(&g) {
                Ok(LimitExit::Exit(q)) => h.record(q),
                Ok(LimitExit::Censored) => h.record_censored(),
                Err(_) => d.degenerate_lattice += 1,
            }
        }
        (h, d)
    });
    let mut histogram = Histogram::new(k_max);
    let mut discards = Discards::default();
    for (h, d) in parts {
        histogram.merge(&h);
        discards.merge(&d);
    }
    Ok(PmfEstimate {
        histogram,
        discards,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub epsilon: f64,
    pub dynamical: PmfEstimate,
    pub lattice: PmfEstimate,
    pub k_cut: usize,
    pub tv_distance: f64,
}

/// Dynamical law of the exit index at `epsilon` against its lattice limit.
pub fn compare_q_laws(
    epsilon: f64,
    samples: u64,
    k_max: usize,
    k_cut: usize,
    seed: u64,
) -> Result<Comparison, ExperimentError> {
    let dynamical = estimate_q_pmf(epsilon, samples, &MeasureSpec::UniformOmega, k_max, seed)?;
    let lattice = limiting_g(samples, k_max, seed.wrapping_add(1))?;
    let tv_distance = stats::tv_distance(&dynamical.histogram, &lattice.histogram, k_cut);
    Ok(Comparison {
        epsilon,
        dynamical,
        lattice,
        k_cut,
        tv_distance,
    })
}

/// Distribution of `F_1 = #(Z^2 g in R(1))` over geodesic pushes of uniform
/// `(x, alpha)` at time `t`, and over Haar samples, as histograms on
/// `0..k_max` with the last cell collecting larger counts.
pub fn f1_distributions(t: f64, samples: u64, k_max: usize, seed: u64) -> (Vec<u64>, Vec<u64>) {
    let cell = |c: u64| (c as usize).min(k_max);
    let merge = |parts: Vec<Vec<u64>>| {
        let mut out = vec![0u64; k_max + 1];
        for p in parts {
            for (a, b) in out.iter_mut().zip(p) {
                *a += b;
            }
        }
        out
    };
    let pushed = merge(run_blocks(samples, seed, |rng, _, len| {
        let mut h = vec![0u64; k_max + 1];
        for _ in 0..len {
            let (x, alpha): (f64, f64) = (rng.random(), rng.random());
            let g = lattice::geodesic_push(x, alpha, t).expect("t in range");
            h[cell(lattice::count_in_rect(&g, 1.0))] += 1;
        }
        h
    }));
    let haar = merge(run_blocks(samples, seed ^ 0xa11ce, |rng, _, len| {
        let mut h = vec![0u64; k_max + 1];
        for _ in 0..len {
            let g = lattice::haar_sample(rng);
            h[cell(lattice::count_in_rect(&g, 1.0))] += 1;
        }
        h
    }));
    (pushed, haar)
}

/// Total-variation distance between two count histograms.
pub fn histogram_tv(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    0.5 * a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs())
        .sum::<f64>()
}

/// Violations of the exit certificates, counted over every exit checked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Certificates {
    pub checked: u64,
    /// `dist(z, Z) > eps Q / 2`.
    pub z_bound: u64,
    /// `|y_out - y_in| > eps Q`.
    pub backtrack: u64,
    /// `reversed` disagrees with `Q odd and floor(zeta_bar) odd`.
    pub parity: u64,
    /// `eps Q < min(y_in, 1 - y_in)` but not reversed.
    pub sufficient: u64,
}

impl Certificates {
    pub fn violations(&self) -> u64 {
        self.z_bound + self.backtrack + self.parity + self.sufficient
    }

    pub fn check(&mut self, s: &ExitSample, epsilon: f64) {
        let r = &s.record;
        let eq = epsilon * s.q as f64;
        self.checked += 1;
        self.z_bound += u64::from(r.z_dist > 0.5 * eq);
        self.backtrack += u64::from((r.y_out - s.ic.y_in).abs() > eq);
        let floor_odd = (r.zeta_bar.floor() as i64).rem_euclid(2) == 1;
        self.parity += u64::from(r.reversed != (s.q % 2 == 1 && floor_odd));
        self.sufficient +=
            u64::from(billiard::reversal_sufficient(&s.ic, epsilon, s.q) && !r.reversed);
    }

    fn merge(&mut self, o: &Certificates) {
        self.checked += o.checked;
        self.z_bound += o.z_bound;
        self.backtrack += o.backtrack;
        self.parity += o.parity;
        self.sufficient += o.sufficient;
    }
}

/// Everything one pass over the exits at a single `eps` yields.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitStatistics {
    pub epsilon: f64,
    pub delta: f64,
    pub histogram: Histogram,
    pub event: Proportion,
    pub reversed: Proportion,
    pub t_cdf: CdfEstimate,
    pub certificates: Certificates,
    pub audit: Audit,
    pub discards: Discards,
}

#[derive(Clone)]
struct ExitAcc {
    hist: Histogram,
    event: u64,
    reversed: u64,
    exits: u64,
    cdf: Vec<u64>,
    certs: Certificates,
    audit: Audit,
}

/// Exit-index law, reversal probability, `eps T` CDF and certificate
/// counts from one set of samples.
pub fn exit_statistics(
    epsilon: f64,
    delta: f64,
    samples: u64,
    measure: &MeasureSpec,
    k_max: usize,
    grid: &[f64],
    seed: u64,
) -> Result<ExitStatistics, ExperimentError> {
    if samples == 0 {
        return Err(ExperimentError::EmptySample);
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(ExperimentError::InvalidParams(format!(
            "delta must lie in (0, 1], got {delta}"
        )));
    }
    if grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(ExperimentError::InvalidParams("grid must be nondecreasing".into()));
    }
    let init = || ExitAcc {
        hist: Histogram::new(k_max),
        event: 0,
        reversed: 0,
        exits: 0,
        cdf: vec![0; grid.len()],
        certs: Certificates::default(),
        audit: Audit::default(),
    };
    let (acc, discards) = fold_exits(
        epsilon,
        samples,
        measure,
        seed,
        init,
        |acc, index, out| match out {
            Outcome::Exit(s) => {
                acc.hist.record(s.q);
                acc.exits += 1;
                let rev = s.record.reversed;
                acc.reversed += u64::from(rev);
                acc.event += u64::from(rev && (s.record.y_out - s.ic.y_in).abs() < delta);
                let first = grid.partition_point(|&t| t <= epsilon * s.record.t);
                for c in &mut acc.cdf[first..] {
                    *c += 1;
                }
                acc.certs.check(s, epsilon);
                if index % AUDIT_STRIDE == 0 {
                    audit_exit(s, epsilon, &mut acc.audit);
                }
            }
            Outcome::Censored => acc.hist.record_censored(),
            Outcome::Unresolved => {}
        },
        |a, b| {
            a.hist.merge(&b.hist);
            a.event += b.event;
            a.reversed += b.reversed;
            a.exits += b.exits;
            for (x, y) in a.cdf.iter_mut().zip(&b.cdf) {
                *x += y;
            }
            a.certs.merge(&b.certs);
            a.audit.checked += b.audit.checked;
            a.audit.mismatches += b.audit.mismatches;
            a.audit.skipped += b.audit.skipped;
        },
    );
    let total = acc.hist.total();
    Ok(ExitStatistics {
        epsilon,
        delta,
        event: Proportion::new(acc.event, acc.exits),
        reversed: Proportion::new(acc.reversed, acc.exits),
        t_cdf: CdfEstimate {
            grid: grid.to_vec(),
            cdf: acc.cdf.iter().map(|&c| c as f64 / total.max(1) as f64).collect(),
            total,
            censored: acc.hist.censored,
            discards,
        },
        histogram: acc.hist,
        certificates: acc.certs,
        audit: acc.audit,
        discards,
    })
}

/// Hits per second of the naive scan and the accelerated stream on one
/// fixed rotation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Throughput {
    pub epsilon: f64,
    pub naive_hits: u64,
    pub naive_seconds: f64,
    pub fast_hits: u64,
    pub fast_seconds: f64,
}

impl Throughput {
    pub fn naive_rate(&self) -> f64 {
        self.naive_hits as f64 / self.naive_seconds
    }

    pub fn fast_rate(&self) -> f64 {
        self.fast_hits as f64 / self.fast_seconds
    }

    pub fn speedup(&self) -> f64 {
        self.fast_rate() / self.naive_rate()
    }
}

/// Starting point and angle of the benchmark workload.
pub const BENCH_X0: f64 = 0.1;
pub const BENCH_ALPHA: f64 = 0.618_033_988_749_894_9;

/// Times both hit generators on the benchmark rotation; fails if they
/// disagree on the common prefix.
pub fn hit_throughput(
    epsilon: f64,
    naive_hits: usize,
    fast_hits: usize,
) -> Result<Throughput, ExperimentError> {
    if naive_hits == 0 || fast_hits == 0 {
        return Err(ExperimentError::EmptySample);
    }
    let p = RotationParams::from_alpha(BENCH_X0, BENCH_ALPHA, epsilon)
        .map_err(|e| ExperimentError::InvalidParams(e.to_string()))?;
    let start = Instant::now();
    let naive = rotation::hitting_times_naive(&p, naive_hits, u64::MAX)
        .map_err(|e| ExperimentError::InvalidParams(e.to_string()))?;
    let naive_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let fast = rotation::hitting_times_fast(&p, fast_hits)
        .map_err(|e| ExperimentError::InvalidParams(e.to_string()))?;
    let fast_seconds = start.elapsed().as_secs_f64();
    let common = naive_hits.min(fast_hits);
    if naive.m[..common] != fast.m[..common] {
        return Err(ExperimentError::InvalidParams(
            "fast and naive hitting times disagree".into(),
        ));
    }
    Ok(Throughput {
        epsilon,
        naive_hits: naive_hits as u64,
        naive_seconds,
        fast_hits: fast_hits as u64,
        fast_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_exit_from_stream() {
        let ic = InitialCondition::from_slope(0.9, 0.2).unwrap();
        let Outcome::Exit(s) = simulate_exit(&ic, 0.3, 100) else {
            panic!("no exit")
        };
        assert_eq!(s.q, 1);
        assert_eq!(s.odd_sum, 1);
        assert!(s.record.reversed);
        assert!((s.record.y_out - 0.7).abs() < 1e-15);
    }

    #[test]
    fn empty_samples_rejected() {
        let m = MeasureSpec::UniformOmega;
        assert_eq!(
            estimate_reversal(0.1, 0.1, 0, &m, 1),
            Err(ExperimentError::EmptySample)
        );
        assert_eq!(estimate_q_pmf(0.1, 0, &m, 5, 1), Err(ExperimentError::EmptySample));
        assert_eq!(
            estimate_t_cdf(0.1, 0, &m, &[1.0], 1),
            Err(ExperimentError::EmptySample)
        );
        assert_eq!(
            joint_hit_cdf(0.1, 10, &[1.0, 2.0, 3.0, 4.0], 1),
            Err(ExperimentError::ArityError(4))
        );
    }

    #[test]
    fn delta_one_is_reversal_only() {
        let m = MeasureSpec::UniformOmega;
        let r = estimate_reversal(0.1, 1.0, 5000, &m, 3).unwrap();
        assert_eq!(r.event.successes, r.reversed.successes);
        let r2 = estimate_reversal(0.1, 0.1, 5000, &m, 3).unwrap();
        assert!(r2.event.successes <= r.event.successes);
        assert_eq!(r2.reversed, r.reversed);
        assert_eq!(r.audit.mismatches, 0);
        assert!(r.audit.checked > 0);
    }

    #[test]
    fn sampled_angles_have_no_atoms() {
        let m = MeasureSpec::UniformOmega;
        let mut alphas: Vec<f64> = run_blocks(200_000, 17, |rng, _, len| {
            let mut redraws = 0;
            (0..len)
                .map(|_| m.sample(rng, &mut redraws).rotation(0.01).unwrap().alpha())
                .collect::<Vec<_>>()
        })
        .concat();
        let n = alphas.len();
        alphas.sort_by(f64::total_cmp);
        alphas.dedup();
        assert_eq!(alphas.len(), n);
        assert!(alphas.iter().all(|a| (0.0..1.0).contains(a)));
    }

    #[test]
    fn pmf_mass_sums_to_one() {
        let e = estimate_q_pmf(0.1, 3000, &MeasureSpec::UniformOmega, 7, 9).unwrap();
        let h = &e.histogram;
        let s: f64 = h.pmf().iter().sum::<f64>() + h.tail_mass();
        assert!((s - 1.0).abs() < 1e-12);
        // Exit indices are odd.
        for k in (2..=7).step_by(2) {
            assert_eq!(h.counts[k - 1], 0);
        }
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_q_pmf(0.05, 10_000, &MeasureSpec::UniformOmega, 9, 42).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn t_cdf_is_monotone_and_starts_at_zero() {
        let grid = [0.0, 0.5, 1.0, 2.0, 5.0, 50.0];
        let c = estimate_t_cdf(0.05, 4000, &MeasureSpec::UniformOmega, &grid, 5).unwrap();
        assert_eq!(c.cdf[0], 0.0);
        assert!(c.cdf.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn joint_cdf_at_zero_is_one() {
        let j = joint_hit_cdf(0.01, 2000, &[0.0, 0.0], 4).unwrap();
        assert_eq!(j.dynamical.p, 1.0);
        assert_eq!(j.lattice.p, 1.0);
    }

    #[test]
    fn custom_measure_checks_normalisation() {
        assert!(MeasureSpec::custom(|_, _| 1.0, 1.0).is_ok());
        assert!(MeasureSpec::custom(|_, _| 2.0, 2.0).is_err());
        let m = MeasureSpec::custom(|y, _| 2.0 * y, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut redraws = 0;
        let mean: f64 = (0..20_000).map(|_| m.sample(&mut rng, &mut redraws).y_in).sum::<f64>() / 20_000.0;
        assert!((mean - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn tail_needs_data() {
        assert!(matches!(
            tail_diagnostic(1.0, 0.1, 10, &[50, 60], 1),
            Err(ExperimentError::InsufficientData { .. })
        ));
    }

    #[test]
    fn one_pass_matches_separate_estimators() {
        let m = MeasureSpec::UniformOmega;
        let grid = [0.5, 2.0, 10.0];
        let all = exit_statistics(0.05, 0.1, 3000, &m, 50, &grid, 9).unwrap();
        let pmf = estimate_q_pmf(0.05, 3000, &m, 50, 9).unwrap();
        let rev = estimate_reversal(0.05, 0.1, 3000, &m, 9).unwrap();
        let cdf = estimate_t_cdf(0.05, 3000, &m, &grid, 9).unwrap();
        assert_eq!(all.histogram, pmf.histogram);
        assert_eq!(all.event, rev.event);
        assert_eq!(all.audit, rev.audit);
        assert_eq!(all.t_cdf, cdf);
        assert_eq!(all.certificates.checked, rev.event.trials);
        assert_eq!(all.certificates.violations(), 0);
    }

    #[test]
    fn throughput_runs_and_agrees() {
        let t = hit_throughput(1e-3, 200, 2000).unwrap();
        assert_eq!(t.naive_hits, 200);
        assert!(t.fast_rate() > 0.0 && t.naive_rate() > 0.0);
    }
}
