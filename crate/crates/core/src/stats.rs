//! Binomial intervals, empirical laws and distances between them.

use serde::Serialize;
use statrs::function::beta::beta_reg;

pub const CONFIDENCE: f64 = 0.95;

/// Quantile of the Beta(a, b) law by bisection on the regularized
/// incomplete beta function, to full double precision.
fn beta_quantile(a: f64, b: f64, q: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if beta_reg(a, b, mid) < q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Exact (Clopper-Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(successes: u64, trials: u64, level: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let a = 0.5 * (1.0 - level);
    let (k, n) = (successes as f64, trials as f64);
    let lo = if successes == 0 {
        0.0
    } else {
        beta_quantile(k, n - k + 1.0, a)
    };
    let hi = if successes == trials {
        1.0
    } else {
        beta_quantile(k + 1.0, n - k, 1.0 - a)
    };
    (lo, hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub p: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (ci_low, ci_high) = clopper_pearson(successes, trials, CONFIDENCE);
        Proportion {
            successes,
            trials,
            p: if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 },
            ci_low,
            ci_high,
        }
    }

    /// Binomial standard error at the point estimate.
    pub fn std_error(&self) -> f64 {
        (self.p * (1.0 - self.p) / self.trials as f64).sqrt()
    }
}

/// Counts of an integer-valued variable on `1..=k_max`, with the mass above
/// `k_max` and the undecided (censored) mass kept apart.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Histogram {
    /// `counts[k - 1]` is the number of samples equal to `k`.
    pub counts: Vec<u64>,
    pub tail: u64,
    pub censored: u64,
}

impl Histogram {
    pub fn new(k_max: usize) -> Self {
        Histogram {
            counts: vec![0; k_max],
            tail: 0,
            censored: 0,
        }
    }

    pub fn k_max(&self) -> usize {
        self.counts.len()
    }

    /// Records a value `k >= 1`.
    pub fn record(&mut self, k: usize) {
        match self.counts.get_mut(k.wrapping_sub(1)) {
            Some(c) => *c += 1,
            None => self.tail += 1,
        }
    }

    pub fn record_censored(&mut self) {
        self.censored += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.tail + self.censored
    }

    pub fn merge(&mut self, other: &Histogram) {
        assert_eq!(self.k_max(), other.k_max());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.tail += other.tail;
        self.censored += other.censored;
    }

    pub fn pmf(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Mass beyond `k_max`, censored samples included (their value is known
    /// to exceed any index they were followed to).
    pub fn tail_mass(&self) -> f64 {
        (self.tail + self.censored) as f64 / self.total() as f64
    }

    pub fn proportion(&self, k: usize) -> Proportion {
        Proportion::new(self.counts[k - 1], self.total())
    }

    /// Rows `(k, p, ci_low, ci_high)`.
    pub fn rows(&self) -> Vec<(usize, Proportion)> {
        (1..=self.k_max()).map(|k| (k, self.proportion(k))).collect()
    }
}

/// `1/2 (sum_{k <= k_cut} |p_k - q_k| + |P(K > k_cut) - Q(K > k_cut)|)`.
pub fn tv_distance(p: &Histogram, q: &Histogram, k_cut: usize) -> f64 {
    let (pp, qp) = (p.pmf(), q.pmf());
    let k_cut = k_cut.min(pp.len()).min(qp.len());
    let head: f64 = (0..k_cut).map(|i| (pp[i] - qp[i]).abs()).sum();
    let tail_p = 1.0 - pp[..k_cut].iter().sum::<f64>();
    let tail_q = 1.0 - qp[..k_cut].iter().sum::<f64>();
    0.5 * (head + (tail_p - tail_q).abs())
}

/// Kolmogorov-Smirnov distance of a sample from the uniform law on `[0, 1)`.
pub fn ks_uniform(sample: &mut [f64]) -> f64 {
    sample.sort_by(f64::total_cmp);
    let n = sample.len() as f64;
    sample
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let (lo, hi) = (i as f64 / n, (i + 1) as f64 / n);
            (x - lo).max(hi - x)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().map(|&(x, y)| (x.ln(), y.ln())).unzip();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Largest absolute difference between two functions tabulated on one grid.
pub fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clopper_pearson_known_values() {
        // Reference values from the beta quantile definition.
        let (lo, hi) = clopper_pearson(5, 10, 0.95);
        assert!((lo - 0.187_086_028_447_521_4).abs() < 1e-6);
        assert!((hi - 0.812_913_971_552_478_6).abs() < 1e-6);
        let (lo, hi) = clopper_pearson(0, 10, 0.95);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        assert_eq!(clopper_pearson(10, 10, 0.95).1, 1.0);
    }

    #[test]
    fn clopper_pearson_rare_events_in_huge_samples() {
        // Poisson limit: the upper bound for 0 of n is -ln(0.025) / n.
        let (_, hi) = clopper_pearson(0, 10_000_000, 0.95);
        assert!((hi / (-(0.025f64).ln() / 1e7) - 1.0).abs() < 1e-5);
        // Exact Poisson interval for 75 events (chi-square quantiles / 2).
        let (lo, hi) = clopper_pearson(75, 10_000_000, 0.95);
        assert!((lo * 1e7 - 58.99).abs() < 0.01, "{lo}");
        assert!((hi * 1e7 - 94.01).abs() < 0.01, "{hi}");
    }

    #[test]
    fn histogram_mass_is_complete() {
        let mut h = Histogram::new(3);
        for k in [1, 1, 3, 5, 9] {
            h.record(k);
        }
        h.record_censored();
        let total: f64 = h.pmf().iter().sum::<f64>() + h.tail_mass();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(h.tail, 2);
        assert_eq!(h.total(), 6);
    }

    #[test]
    fn tv_of_identical_and_disjoint() {
        let mut a = Histogram::new(4);
        let mut b = Histogram::new(4);
        a.record(1);
        b.record(1);
        assert_eq!(tv_distance(&a, &b, 4), 0.0);
        let mut c = Histogram::new(4);
        c.record(3);
        assert!((tv_distance(&a, &c, 4) - 1.0).abs() < 1e-15);
        let mut d = Histogram::new(4);
        d.record(7);
        assert!((tv_distance(&a, &d, 4) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn loglog_slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..20).map(|k| (k as f64, 3.0 * (k as f64).powf(-3.0))).collect();
        assert!((loglog_slope(&pts).unwrap() + 3.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }

    #[test]
    fn ks_of_regular_grid_is_small() {
        let mut s: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        assert!((ks_uniform(&mut s) - 0.0005).abs() < 1e-12);
    }
}
