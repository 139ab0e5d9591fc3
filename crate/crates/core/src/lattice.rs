//! Unimodular affine lattices: Haar sampling, the geodesic push of a
//! rotation, rectangle counts and the ordered points of the unit tube.
//!
//! A lattice is stored as `(M, v)` with point set `{(k, l) M + v}`, so the
//! rows of `M` are the basis vectors.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::dd::Dd;

/// Upper cutoff of the cusp in fundamental-domain sampling.
pub const Y_MAX: f64 = 1e6;
/// Largest geodesic time accepted by [`geodesic_push`].
pub const MAX_FLOW_TIME: f64 = 60.0;
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("determinant {0} is not 1")]
    NotUnimodular(f64),
    #[error("degenerate lattice: {0}")]
    DegenerateLattice(&'static str),
    #[error("found {found} of {wanted} tube points before x = {x_budget}")]
    BudgetExhausted {
        found: usize,
        wanted: usize,
        x_budget: f64,
    },
    #[error("geodesic time {0} outside the supported range [0, 60]")]
    Overflow(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AffineLattice {
    pub m: [[f64; 2]; 2],
    pub v: [f64; 2],
}

impl AffineLattice {
    pub fn new(m: [[f64; 2]; 2], v: [f64; 2]) -> Result<Self, LatticeError> {
        let g = AffineLattice { m, v };
        let det = g.det();
        if !((det - 1.0).abs() <= 1e-12) {
            return Err(LatticeError::NotUnimodular(det));
        }
        Ok(g)
    }

    pub fn identity(v: [f64; 2]) -> Self {
        AffineLattice {
            m: [[1.0, 0.0], [0.0, 1.0]],
            v,
        }
    }

    pub fn det(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        a * d - b * c
    }

    /// The lattice point with integer coordinates `(k, l)`.
    pub fn point(&self, k: i64, l: i64) -> [f64; 2] {
        let (x, y) = self.point_dd(k as f64, l as f64);
        [x.to_f64(), y.to_f64()]
    }

    #[inline]
    fn point_dd(&self, k: f64, l: f64) -> (Dd, Dd) {
        let [[a, b], [c, d]] = self.m;
        let x = (Dd::product(k, a) + Dd::product(l, c)).add_f64(self.v[0]);
        let y = (Dd::product(k, b) + Dd::product(l, d)).add_f64(self.v[1]);
        (x, y)
    }

    /// Coordinates of `v` in the basis given by the rows of `M`.
    pub fn translation_coords(&self) -> [f64; 2] {
        let [[a, b], [c, d]] = self.m;
        let det = self.det();
        let [x, y] = self.v;
        [(x * d - y * c) / det, (-x * b + y * a) / det]
    }

    /// The linear lattice `Z^2 M` (translation dropped).
    pub fn linear(&self) -> AffineLattice {
        AffineLattice {
            m: self.m,
            v: [0.0, 0.0],
        }
    }

    /// Calls `f(x, y)` for every lattice point in `(x0, x1] x [y0, y1]`.
    ///
    /// The integer coordinate with the shorter range over the box is looped
    /// over; the other is solved for and every candidate is tested exactly.
    pub fn for_each_in_box(
        &self,
        (x0, x1): (f64, f64),
        (y0, y1): (f64, f64),
        mut f: impl FnMut(f64, f64),
    ) {
        if !(x1 > x0 && y1 >= y0) {
            return;
        }
        let [[a, b], [c, d]] = self.m;
        let det = self.det();
        let corners = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)];
        let coord = |outer_k: bool, (px, py): (f64, f64)| {
            let (px, py) = (px - self.v[0], py - self.v[1]);
            if outer_k {
                (px * d - py * c) / det
            } else {
                (-px * b + py * a) / det
            }
        };
        let k_width = (x1 - x0) * d.abs() + (y1 - y0) * c.abs();
        let l_width = (x1 - x0) * b.abs() + (y1 - y0) * a.abs();
        let outer_k = k_width <= l_width;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for p in corners {
            let t = coord(outer_k, p);
            lo = lo.min(t);
            hi = hi.max(t);
        }
        // Row multiplying the outer and inner coordinates.
        let (outer_row, inner_row) = if outer_k { ([a, b], [c, d]) } else { ([c, d], [a, b]) };
        let mut j = lo.floor() - 1.0;
        let j_end = hi.ceil() + 1.0;
        while j <= j_end {
            let base_x = j * outer_row[0] + self.v[0];
            let base_y = j * outer_row[1] + self.v[1];
            let mut ilo = f64::NEG_INFINITY;
            let mut ihi = f64::INFINITY;
            let mut feasible = true;
            for (base, coef, lo_b, hi_b) in
                [(base_x, inner_row[0], x0, x1), (base_y, inner_row[1], y0, y1)]
            {
                if coef != 0.0 {
                    let (p, q) = ((lo_b - base) / coef, (hi_b - base) / coef);
                    ilo = ilo.max(p.min(q));
                    ihi = ihi.min(p.max(q));
                } else if base < lo_b - 1e-9 || base > hi_b + 1e-9 {
                    feasible = false;
                }
            }
            if feasible && ilo.is_finite() && ihi.is_finite() {
                let mut i = ilo.floor() - 1.0;
                let i_end = ihi.ceil() + 1.0;
                while i <= i_end {
                    let (k, l) = if outer_k { (j, i) } else { (i, j) };
                    let (x, y) = self.point_dd(k, l);
                    if x.hi.is_finite()
                        && !x.le_f64(x0)
                        && x.le_f64(x1)
                        && y.ge_f64(y0)
                        && y.le_f64(y1)
                    {
                        f(x.to_f64(), y.to_f64());
                    }
                    i += 1.0;
                }
            }
            j += 1.0;
        }
    }
}

/// A Haar-random point of the space of unimodular affine lattices.
///
/// The linear part is drawn through the modular fundamental domain with the
/// hyperbolic area measure, truncated at `Y_MAX`, and a uniform rotation; the
/// translation is uniform on a fundamental parallelogram of `Z^2 M`.
pub fn haar_sample<R: Rng + ?Sized>(rng: &mut R) -> AffineLattice {
    let s_max = 2.0 / 3f64.sqrt();
    let s_min = 1.0 / Y_MAX;
    let (x, y) = loop {
        let x: f64 = rng.random::<f64>() - 0.5;
        // 1/y is uniform for the measure dy / y^2.
        let s = s_min + (s_max - s_min) * rng.random::<f64>();
        let y = 1.0 / s;
        if x * x + y * y >= 1.0 {
            break (x, y);
        }
    };
    let r = y.sqrt();
    let base = [[1.0 / r, 0.0], [x / r, r]];
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    let (sn, cs) = theta.sin_cos();
    let m = [
        [base[0][0] * cs, base[0][0] * sn],
        [
            base[1][0] * cs - base[1][1] * sn,
            base[1][0] * sn + base[1][1] * cs,
        ],
    ];
    let u: [f64; 2] = [rng.random(), rng.random()];
    let v = [
        u[0] * m[0][0] + u[1] * m[1][0],
        u[0] * m[0][1] + u[1] * m[1][1],
    ];
    AffineLattice { m, v }
}

/// The lattice `(0, x) n(alpha) Phi^t`: shear by `alpha`, then the diagonal
/// flow `diag(e^{-t/2}, e^{t/2})`. At `t = -2 ln eps` its points in `R(T)`
/// are exactly the window visits of the rotation up to time `T / eps`.
pub fn geodesic_push(x: f64, alpha: f64, t: f64) -> Result<AffineLattice, LatticeError> {
    if !(0.0..=MAX_FLOW_TIME).contains(&t) {
        return Err(LatticeError::Overflow(t));
    }
    let (shrink, grow) = ((-0.5 * t).exp(), (0.5 * t).exp());
    Ok(AffineLattice {
        m: [[shrink, alpha * grow], [0.0, grow]],
        v: [0.0, x.rem_euclid(1.0) * grow],
    })
}

/// `#(Z^2 g  in  (0, T] x [-1/2, 1/2])`.
pub fn count_in_rect(g: &AffineLattice, t: f64) -> u64 {
    count_in_box(g, (0.0, t), (-0.5, 0.5))
}

pub fn count_in_box(g: &AffineLattice, xr: (f64, f64), yr: (f64, f64)) -> u64 {
    let mut n = 0;
    g.for_each_in_box(xr, yr, |_, _| n += 1);
    n
}

/// Streams the points of `g` in `(0, inf) x [-1/2, 1/2]` in increasing
/// abscissa.
#[derive(Clone, Debug)]
pub struct TubeWalker {
    g: AffineLattice,
    done_to: f64,
    width: f64,
    buffer: Vec<(f64, f64)>,
    next: usize,
    last_x: f64,
}

impl TubeWalker {
    pub fn new(g: AffineLattice) -> Self {
        TubeWalker {
            g,
            done_to: 0.0,
            width: 4.0,
            buffer: Vec::new(),
            next: 0,
            last_x: f64::NEG_INFINITY,
        }
    }

    /// Abscissa up to which every tube point has been produced or buffered.
    pub fn scanned_to(&self) -> f64 {
        self.done_to
    }

    /// Next tube point with abscissa at most `x_budget`.
    pub fn next_point(&mut self, x_budget: f64) -> Result<Option<(f64, f64)>, LatticeError> {
        while self.next == self.buffer.len() {
            if self.done_to >= x_budget {
                return Ok(None);
            }
            let hi = (self.done_to + self.width).min(x_budget);
            self.buffer.clear();
            self.next = 0;
            // The first window reaches slightly left of zero so that points on
            // the entrance line are caught rather than silently dropped.
            let lo = if self.done_to == 0.0 { -BOUNDARY_TOLERANCE } else { self.done_to };
            let mut bad = None;
            self.g.for_each_in_box((lo, hi), (-0.5, 0.5), |x, y| {
                if x.abs() < BOUNDARY_TOLERANCE {
                    bad = Some("point on the tube entrance");
                } else if 0.5 - y.abs() < BOUNDARY_TOLERANCE {
                    bad = Some("point on the tube boundary");
                }
                self.buffer.push((x, y));
            });
            if let Some(why) = bad {
                return Err(LatticeError::DegenerateLattice(why));
            }
            self.buffer.sort_by(|p, q| p.0.total_cmp(&q.0));
            self.done_to = hi;
            if self.buffer.is_empty() {
                self.width *= 2.0;
            }
        }
        let p = self.buffer[self.next];
        self.next += 1;
        if p.0 - self.last_x < BOUNDARY_TOLERANCE {
            return Err(LatticeError::DegenerateLattice("repeated abscissa"));
        }
        self.last_x = p.0;
        Ok(Some(p))
    }
}

/// First tube points of a lattice with gaps and alternating sums.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LimitProcessSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub eta: Vec<f64>,
    pub xi_limit: Vec<f64>,
    /// `None` if no alternating sum among the listed points is nonpositive.
    pub q_limit: Option<usize>,
}

pub fn tube_points(
    g: &AffineLattice,
    count: usize,
    x_budget: f64,
) -> Result<LimitProcessSample, LatticeError> {
    let mut walker = TubeWalker::new(*g);
    let mut s = LimitProcessSample::default();
    let mut prev = 0.0;
    let mut sum = 0.0;
    while s.x.len() < count {
        let Some((x, y)) = walker.next_point(x_budget)? else {
            return Err(LatticeError::BudgetExhausted {
                found: s.x.len(),
                wanted: count,
                x_budget,
            });
        };
        let gap = x - prev;
        sum += if s.x.len() % 2 == 0 { gap } else { -gap };
        if s.q_limit.is_none() && sum <= 0.0 {
            s.q_limit = Some(s.x.len());
        }
        s.x.push(x);
        s.y.push(y);
        s.eta.push(gap);
        s.xi_limit.push(sum);
        prev = x;
    }
    Ok(s)
}

/// Outcome of following the tube points until the alternating sum of gaps
/// first becomes nonpositive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LimitExit {
    Exit(usize),
    /// No decision before the abscissa budget.
    Censored,
}

/// The limit exit index of `g`: `Q = min{j : xi_j <= 0} - 1`.
pub fn q_limit(g: &AffineLattice, x_budget: f64) -> Result<LimitExit, LatticeError> {
    let mut walker = TubeWalker::new(*g);
    let mut j = 0usize;
    let mut prev = 0.0f64;
    let mut sum = 0.0f64;
    loop {
        // At odd j the sum is positive; the exit is decided as soon as the
        // region (x_j, x_j + sum) is known to be free of tube points.
        let limit = if j % 2 == 1 { (prev + sum).min(x_budget) } else { x_budget };
        match walker.next_point(limit)? {
            Some((x, _)) => {
                j += 1;
                let gap = x - prev;
                sum += if j % 2 == 1 { gap } else { -gap };
                prev = x;
                if sum <= 0.0 {
                    return Ok(LimitExit::Exit(j - 1));
                }
            }
            None => {
                if j % 2 == 1 && prev + sum <= x_budget {
                    return Ok(LimitExit::Exit(j));
                }
                return Ok(LimitExit::Censored);
            }
        }
    }
}

/// The shortest vectors of the linear lattice `Z^2 M` with positive abscissa
/// and ordinate in `(0, 1)` (first) and `(-1, 0)` (second).
pub fn short_tube_vectors(g: &AffineLattice) -> Result<([f64; 2], [f64; 2]), LatticeError> {
    let lin = g.linear();
    let mut width = 4.0;
    while width <= (1u64 << 22) as f64 {
        let mut up: Option<[f64; 2]> = None;
        let mut down: Option<[f64; 2]> = None;
        let mut flat = false;
        lin.for_each_in_box((0.0, width), (-1.0, 1.0), |x, y| {
            if y.abs() < BOUNDARY_TOLERANCE {
                flat = true;
            } else if y.abs() >= 1.0 - BOUNDARY_TOLERANCE {
                // |y| = 1 vectors never serve as returns.
            } else if y > 0.0 {
                if up.is_none_or(|u| x < u[0]) {
                    up = Some([x, y]);
                }
            } else if down.is_none_or(|u| x < u[0]) {
                down = Some([x, y]);
            }
        });
        if flat {
            return Err(LatticeError::DegenerateLattice("horizontal lattice vector"));
        }
        if let (Some(u), Some(d)) = (up, down) {
            return Ok((u, d));
        }
        width *= 2.0;
    }
    Err(LatticeError::DegenerateLattice("no return vectors found"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_count(g: &AffineLattice, t: f64, r: i64) -> u64 {
        let mut n = 0;
        for k in -r..=r {
            for l in -r..=r {
                let [x, y] = g.point(k, l);
                if x > 0.0 && x <= t && (-0.5..=0.5).contains(&y) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_in_rect(&AffineLattice::identity([0.0, 0.0]), 2.5), 2);
        assert_eq!(count_in_rect(&AffineLattice::identity([0.3, 0.2]), 2.5), 3);
        assert_eq!(count_in_rect(&AffineLattice::identity([0.3, 0.2]), 0.0), 0);
    }

    #[test]
    fn count_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let g = haar_sample(&mut rng);
            // Keep the brute-force window large enough for moderate lattices.
            if g.m.iter().flatten().any(|e| e.abs() > 20.0) {
                continue;
            }
            let t = 5.0 * rng.random::<f64>();
            assert_eq!(count_in_rect(&g, t), brute_count(&g, t, 400));
        }
    }

    #[test]
    fn haar_samples_are_unimodular() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let g = haar_sample(&mut rng);
            assert!((g.det() - 1.0).abs() < 1e-12);
            let u = g.translation_coords();
            assert!(u.iter().all(|c| (-1e-9..1.0 + 1e-9).contains(c)));
        }
    }

    #[test]
    fn geodesic_push_at_zero_is_shear() {
        let g = geodesic_push(0.25, 0.4, 0.0).unwrap();
        assert_eq!(g.m, [[1.0, 0.4], [0.0, 1.0]]);
        assert_eq!(g.v, [0.0, 0.25]);
        assert!(matches!(geodesic_push(0.1, 0.2, 61.0), Err(LatticeError::Overflow(_))));
        let eps: f64 = 0.01;
        let g = geodesic_push(0.1, 0.2, -2.0 * eps.ln()).unwrap();
        assert!((g.m[0][0] - eps).abs() < 1e-15);
        assert!((g.m[1][1] - 1.0 / eps).abs() < 1e-10);
    }

    #[test]
    fn tube_points_of_shifted_square_lattice() {
        let s = tube_points(&AffineLattice::identity([0.3, 0.2]), 3, 100.0).unwrap();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(&s.x, &[0.3, 1.3, 2.3]));
        assert!(close(&s.eta, &[0.3, 1.0, 1.0]));
        assert!(close(&s.xi_limit[..2], &[0.3, -0.7]));
        assert_eq!(s.q_limit, Some(1));
        let g = AffineLattice::identity([0.3, 0.2]);
        assert_eq!(q_limit(&g, 100.0).unwrap(), LimitExit::Exit(1));
    }

    #[test]
    fn origin_point_is_degenerate() {
        let g = AffineLattice::identity([0.0, 0.2]);
        assert!(matches!(
            tube_points(&g, 3, 100.0),
            Err(LatticeError::DegenerateLattice(_))
        ));
    }

    #[test]
    fn budget_exhausted_reports_found_points() {
        let g = AffineLattice::identity([0.3, 0.2]);
        assert_eq!(
            tube_points(&g, 5, 2.0),
            Err(LatticeError::BudgetExhausted {
                found: 2,
                wanted: 5,
                x_budget: 2.0
            })
        );
    }

    #[test]
    fn q_limit_agrees_with_full_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..300 {
            let g = haar_sample(&mut rng);
            let Ok(LimitExit::Exit(q)) = q_limit(&g, 1e4) else { continue };
            let s = tube_points(&g, q + 1, 1e5).unwrap();
            assert_eq!(s.q_limit, Some(q));
            assert_eq!(q % 2, 1);
            checked += 1;
        }
        assert!(checked > 250);
    }

    #[test]
    fn identity_has_no_tube_vectors() {
        assert!(short_tube_vectors(&AffineLattice::identity([0.3, 0.2])).is_err());
    }
}
