//! Circle-rotation reduction of the barrier tube.
//!
//! A particle entering at height `x0` with slope `s` crosses the vertical line
//! `x = l` (in the vertically unfolded tube, counting total horizontal
//! distance `l`) at unfolded height `x0 + l*s`. It reflects off a barrier
//! exactly when that height is within `epsilon/2` of an integer, so the
//! barrier hits are the visits of the rotation orbit `x0 + l*alpha mod 1`,
//! `alpha = s mod 1`, to the closed window `[-epsilon/2, epsilon/2]`.
//!
//! Phases are evaluated in double-double precision directly from the integer
//! step count, so every code path in this module (naive scan, accelerated
//! stream, counting) decides membership with the same predicate
//! [`RotationParams::is_hit`].

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dd::Dd;

/// Rotation steps between exact re-reductions of the accumulated phase.
const RESYNC_PERIOD: u64 = 1 << 16;
/// Half-width of the band around the window edge inside which the naive scan
/// defers to the exact phase.
const GUARD_BAND: f64 = 1e-13;
/// Indices beyond this are no longer exactly representable in an `f64`
/// product with room to spare.
const MAX_INDEX: f64 = 4.5e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RotationError {
    #[error("invalid rotation parameters: {0}")]
    InvalidParams(String),
    #[error("only {found} of {wanted} hits within {budget} rotation steps")]
    BudgetExhausted {
        found: usize,
        wanted: usize,
        budget: u64,
    },
    #[error("continued-fraction structure of alpha not resolvable at working precision")]
    PrecisionLoss,
    #[error("exit index {0} is even; an exit needs an odd number of vertical reflections")]
    ParityError(usize),
    #[error("need {need} return times, only {have} available")]
    TooShort { need: usize, have: usize },
    #[error("position requested at s = {s}, beyond the last computed hit")]
    HorizonExceeded { s: f64 },
}

/// Parameters of one rotation orbit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationParams {
    epsilon: f64,
    alpha: Dd,
    slope: f64,
    x0: f64,
    upper: Dd,
}

impl RotationParams {
    /// Builds the rotation for entry height `x0` and trajectory slope `slope`.
    /// `alpha` is the exact fractional part of the slope.
    pub fn new(x0: f64, slope: f64, epsilon: f64) -> Result<Self, RotationError> {
        if !slope.is_finite() {
            return Err(RotationError::InvalidParams(format!(
                "slope must be finite, got {slope}"
            )));
        }
        let alpha = Dd::from(slope).fract();
        Self::build(x0, alpha, slope, epsilon)
    }

    /// Builds the rotation directly from an angle; the slope is taken equal to
    /// the reduced angle.
    pub fn from_alpha(x0: f64, alpha: f64, epsilon: f64) -> Result<Self, RotationError> {
        if !alpha.is_finite() {
            return Err(RotationError::InvalidParams(format!(
                "alpha must be finite, got {alpha}"
            )));
        }
        let a = Dd::from(alpha).fract();
        Self::build(x0, a, a.to_f64(), epsilon)
    }

    fn build(x0: f64, alpha: Dd, slope: f64, epsilon: f64) -> Result<Self, RotationError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(RotationError::InvalidParams(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&x0) {
            return Err(RotationError::InvalidParams(format!(
                "x0 must lie in [0, 1), got {x0}"
            )));
        }
        Ok(RotationParams {
            epsilon,
            alpha,
            slope,
            x0,
            upper: Dd::sum(1.0, -0.5 * epsilon),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.to_f64()
    }

    pub fn alpha_dd(&self) -> Dd {
        self.alpha
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn half_width(&self) -> f64 {
        0.5 * self.epsilon
    }

    /// `x0 + l*alpha mod 1`, in `[0, 1)`.
    #[inline]
    pub fn phase(&self, l: u64) -> Dd {
        let lf = l as f64;
        let prod = Dd::product(lf, self.alpha.hi);
        let whole = Dd::from(prod.hi - prod.hi.floor());
        let tail = Dd::sum(prod.lo, self.alpha.lo * lf);
        (whole + tail).add_f64(self.x0).fract()
    }

    #[inline]
    fn in_window(&self, phase: Dd) -> bool {
        phase.le_f64(0.5 * self.epsilon) || phase >= self.upper
    }

    /// Whether `R_alpha^l x0` lies in the closed window `[-eps/2, eps/2]`.
    #[inline]
    pub fn is_hit(&self, l: u64) -> bool {
        self.in_window(self.phase(l))
    }
}

/// Hitting times, return times and reflection abscissae of one orbit.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct HitSequence {
    pub m: Vec<u64>,
    pub n: Vec<u64>,
    pub xi: Vec<i64>,
}

impl HitSequence {
    pub fn from_hitting_times(m: Vec<u64>) -> Self {
        let mut n = Vec::with_capacity(m.len());
        let mut xi = Vec::with_capacity(m.len());
        let mut prev = 0u64;
        let mut pos = 0i64;
        for (k, &mk) in m.iter().enumerate() {
            let gap = mk - prev;
            pos += if k % 2 == 0 { gap as i64 } else { -(gap as i64) };
            n.push(gap);
            xi.push(pos);
            prev = mk;
        }
        HitSequence { m, n, xi }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// CSV with header `k,m,n,xi`, `k` starting at 1.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "m", "n", "xi"])?;
        for k in 0..self.len() {
            out.write_record([
                (k + 1).to_string(),
                self.m[k].to_string(),
                self.n[k].to_string(),
                self.xi[k].to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The lower-triangular matrices with `xi = A n` and `m = B n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransferMatrices {
    k: usize,
}

impl TransferMatrices {
    pub fn new(k: usize) -> Self {
        TransferMatrices { k }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `A[i][j] = (-1)^(j+1)` for `i >= j` (1-based), zero above the diagonal.
    pub fn a(&self, i: usize, j: usize) -> i64 {
        if i >= j {
            if j % 2 == 1 {
                1
            } else {
                -1
            }
        } else {
            0
        }
    }

    /// All ones on and below the diagonal.
    pub fn b(&self, i: usize, j: usize) -> i64 {
        i64::from(i >= j)
    }

    pub fn apply_a(&self, n: &[u64]) -> Vec<i64> {
        self.apply(n, |i, j| self.a(i, j))
    }

    pub fn apply_b(&self, n: &[u64]) -> Vec<i64> {
        self.apply(n, |i, j| self.b(i, j))
    }

    fn apply(&self, n: &[u64], entry: impl Fn(usize, usize) -> i64) -> Vec<i64> {
        assert_eq!(n.len(), self.k, "vector length must match matrix size");
        (1..=self.k)
            .map(|i| (1..=i).map(|j| entry(i, j) * n[j - 1] as i64).sum())
            .collect()
    }
}

/// Reflection abscissae expressed through hitting times, `xi = A B^-1 m`.
///
/// Expanding the product gives coefficient `2(-1)^(i+1)` on `m_i` for `i < k`
/// and `(-1)^(k+1)` on `m_k`.
pub fn xi_from_hitting_times(m: &[u64]) -> Vec<i64> {
    let mut out = Vec::with_capacity(m.len());
    let mut head = 0i64; // sum over i < k of 2(-1)^(i+1) m_i
    for (idx, &mk) in m.iter().enumerate() {
        let sign = if idx % 2 == 0 { 1 } else { -1 };
        out.push(head + sign * mk as i64);
        head += 2 * sign * mk as i64;
    }
    out
}

/// Direct-iteration scan of the orbit.
#[derive(Clone, Debug)]
pub struct NaiveScan {
    params: RotationParams,
    l: u64,
    acc: Dd,
}

impl NaiveScan {
    pub fn new(params: RotationParams) -> Self {
        Self::starting_after(params, 0)
    }

    /// A scan whose next candidate step is `l + 1`.
    pub fn starting_after(params: RotationParams, l: u64) -> Self {
        NaiveScan {
            params,
            l,
            acc: params.phase(l),
        }
    }

    /// Next hitting time not exceeding `limit`, or `None` when the scan
    /// reaches `limit` first.
    pub fn next_hit(&mut self, limit: u64) -> Option<u64> {
        let p = &self.params;
        let h = p.half_width();
        while self.l < limit {
            self.l += 1;
            if self.l % RESYNC_PERIOD == 0 {
                self.acc = p.phase(self.l);
            } else {
                self.acc = self.acc + p.alpha;
                if self.acc.ge_f64(1.0) {
                    self.acc = self.acc - Dd::ONE;
                }
            }
            let f = self.acc.hi;
            let dist = f.min(1.0 - f);
            let hit = if (dist - h).abs() > GUARD_BAND {
                dist < h
            } else {
                p.is_hit(self.l)
            };
            if hit {
                return Some(self.l);
            }
        }
        None
    }

    pub fn position(&self) -> u64 {
        self.l
    }
}

/// First hitting times by direct iteration of the rotation.
pub fn hitting_times_naive(
    params: &RotationParams,
    count: usize,
    step_budget: u64,
) -> Result<HitSequence, RotationError> {
    let mut scan = NaiveScan::new(*params);
    let mut m = Vec::with_capacity(count);
    while m.len() < count {
        match scan.next_hit(step_budget) {
            Some(l) => m.push(l),
            None => {
                return Err(RotationError::BudgetExhausted {
                    found: m.len(),
                    wanted: count,
                    budget: step_budget,
                })
            }
        }
    }
    Ok(HitSequence::from_hitting_times(m))
}

/// Return-time data of the window: `a` is the least `l >= 1` with
/// `{l*alpha} <= eps`, `b` the least with `{-l*alpha} <= eps`.
///
/// Every return time of a window point is one of `a`, `b`, `a + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReturnStructure {
    pub a: u64,
    pub b: u64,
    /// `{a*alpha}`, the rightward displacement after `a` steps.
    pub shift_a: Dd,
    /// `{-b*alpha}`, the leftward displacement after `b` steps.
    pub shift_b: Dd,
}

impl ReturnStructure {
    /// Distinct candidate return times in increasing order.
    pub fn candidates(&self) -> ([u64; 3], usize) {
        let (lo, hi) = if self.a <= self.b {
            (self.a, self.b)
        } else {
            (self.b, self.a)
        };
        if lo == hi {
            ([lo, lo + hi, 0], 2)
        } else {
            ([lo, hi, lo + hi], 3)
        }
    }
}

fn frac_multiple(alpha: Dd, i: u64) -> Dd {
    let lf = i as f64;
    let prod = Dd::product(lf, alpha.hi);
    let whole = Dd::from(prod.hi - prod.hi.floor());
    (whole + Dd::sum(prod.lo, alpha.lo * lf)).fract()
}

/// Number of subtractions of `step` from `d` before `d <= eps` or `d < step`.
fn reduction_count(d: Dd, step: Dd, eps: Dd) -> Result<u64, RotationError> {
    let k1 = (d / step).floor();
    let k2 = ((d - eps) / step).ceil();
    let k = if k1 < k2 { k1 } else { k2 }.to_f64().max(1.0);
    if !k.is_finite() || k > MAX_INDEX {
        return Err(RotationError::PrecisionLoss);
    }
    Ok(k as u64)
}

/// Computes `a`, `b` and their displacements by the additive (Stern-Brocot)
/// continued-fraction recursion, accelerated by division.
pub fn return_structure(alpha: Dd, epsilon: f64) -> Result<ReturnStructure, RotationError> {
    let eps = Dd::from(epsilon);
    if alpha == Dd::ZERO {
        return Ok(ReturnStructure {
            a: 1,
            b: 1,
            shift_a: Dd::ZERO,
            shift_b: Dd::ZERO,
        });
    }
    let (mut ia, mut da) = (1u64, alpha);
    let (mut ib, mut db) = (1u64, Dd::ONE - alpha);
    for _ in 0..4096 {
        if da.le_f64(epsilon) && db.le_f64(epsilon) {
            return Ok(ReturnStructure {
                a: ia,
                b: ib,
                shift_a: da,
                shift_b: db,
            });
        }
        if da > db {
            let k = reduction_count(da, db, eps)?;
            ia = ia
                .checked_add(k.checked_mul(ib).ok_or(RotationError::PrecisionLoss)?)
                .ok_or(RotationError::PrecisionLoss)?;
            da = frac_multiple(alpha, ia);
            if da == Dd::ZERO {
                // Rational angle: the orbit is periodic with period `ia`.
                if !db.le_f64(epsilon) {
                    ib = ia;
                    db = Dd::ZERO;
                }
            }
        } else {
            let k = reduction_count(db, da, eps)?;
            ib = ib
                .checked_add(k.checked_mul(ia).ok_or(RotationError::PrecisionLoss)?)
                .ok_or(RotationError::PrecisionLoss)?;
            let f = frac_multiple(alpha, ib);
            db = if f == Dd::ZERO { Dd::ZERO } else { Dd::ONE - f };
            if db == Dd::ZERO && !da.le_f64(epsilon) {
                ia = ib;
                da = Dd::ZERO;
            }
        }
        if ia as f64 > MAX_INDEX || ib as f64 > MAX_INDEX {
            return Err(RotationError::PrecisionLoss);
        }
    }
    Err(RotationError::PrecisionLoss)
}

/// Least `l >= 0` with `{c + l*alpha} <= eps`, by a Euclid-style descent on
/// the number of wraps around the circle.
fn first_entry(alpha: Dd, c: Dd, eps: Dd, depth: u32) -> Option<Dd> {
    if depth > 400 || !alpha.is_finite() || !c.is_finite() {
        return None;
    }
    if c <= eps {
        return Some(Dd::ZERO);
    }
    if alpha == Dd::ZERO {
        return None;
    }
    if alpha.hi > 0.5 {
        // {c + l a} in [0, e]  <=>  {(e - c) + l(1 - a)} in [0, e]
        return first_entry(Dd::ONE - alpha, (eps - c).fract(), eps, depth + 1);
    }
    if alpha <= eps {
        return Some(((Dd::ONE - c) / alpha).ceil());
    }
    // Hits need c + l a in [y, y + e] for some wrap count y >= 1; the least
    // admissible y solves a rotation problem with angle {-1/a}.
    let inv = alpha.recip();
    let beta = (-inv).fract();
    let c2 = ((c - Dd::ONE) * inv).fract();
    let wraps = first_entry(beta, c2, eps * inv, depth + 1)? + Dd::ONE;
    Some(((wraps - c) * inv).ceil())
}

/// Accelerated hit generator built on the three-gap structure of returns.
///
/// Setup costs `O(log 1/eps)` double-double operations; each further hit
/// tests at most three candidate return times.
#[derive(Clone, Debug)]
pub struct HitStream {
    params: RotationParams,
    structure: ReturnStructure,
    /// Candidate return times with the displacement each one produces.
    candidates: [(u64, Dd); 3],
    n_candidates: usize,
    last: u64,
    /// Signed offset of the current hit from the window centre.
    offset: Dd,
    since_sync: u32,
    /// Cut points `eps/2 - {a alpha}` and `-eps/2 + {-b alpha}` separating
    /// the return-time pieces, when they are in order.
    cuts: Option<(f64, f64)>,
    disp_a: Dd,
    disp_b: Dd,
    disp_ab: Dd,
}

/// Hits between exact recomputations of the tracked offset.
const STREAM_RESYNC: u32 = 4096;
/// Margin from the window edge inside which the tracked offset is not
/// trusted and the exact phase decides.
const STREAM_GUARD: f64 = 1e-22;
/// Margin around the cut points inside which the piece is not decided from
/// the leading word of the offset.
const CUT_GUARD: f64 = 1e-14;

/// Representative of `p mod 1` in `[-1/2, 1/2)`.
#[inline]
fn centred(p: Dd) -> Dd {
    if p.hi >= 0.5 {
        p - Dd::ONE
    } else if p.hi < -0.5 {
        p + Dd::ONE
    } else {
        p
    }
}

impl HitStream {
    pub fn new(params: RotationParams) -> Result<Self, RotationError> {
        let structure = return_structure(params.alpha, params.epsilon)?;
        let (times, n_candidates) = structure.candidates();
        let mut candidates = [(0u64, Dd::ZERO); 3];
        for (slot, &r) in candidates.iter_mut().zip(&times[..n_candidates]) {
            let disp = if r == structure.a {
                structure.shift_a
            } else if r == structure.b {
                -structure.shift_b
            } else if structure.a == structure.b {
                structure.shift_a.mul_f64(2.0)
            } else {
                structure.shift_a - structure.shift_b
            };
            *slot = (r, disp);
        }
        let h = 0.5 * params.epsilon;
        let cut_a = (Dd::from(h) - structure.shift_a).to_f64();
        let cut_b = (structure.shift_b - Dd::from(h)).to_f64();
        let cuts = (cut_a + CUT_GUARD < cut_b - CUT_GUARD && cut_a > -h && cut_b < h)
            .then_some((cut_a, cut_b));
        Ok(HitStream {
            params,
            structure,
            candidates,
            n_candidates,
            last: 0,
            offset: Dd::ZERO,
            since_sync: 0,
            cuts,
            disp_a: structure.shift_a,
            disp_b: -structure.shift_b,
            disp_ab: structure.shift_a - structure.shift_b,
        })
    }

    pub fn structure(&self) -> &ReturnStructure {
        &self.structure
    }

    /// Most recent hitting time, zero before the first hit.
    pub fn last(&self) -> u64 {
        self.last
    }

    fn first_hit(&self) -> Result<u64, RotationError> {
        let p = &self.params;
        let c = p.phase(1).add_f64(p.half_width()).fract();
        let offset = first_entry(p.alpha, c, Dd::from(p.epsilon), 0)
            .ok_or(RotationError::PrecisionLoss)?
            .to_f64();
        if !(0.0..MAX_INDEX).contains(&offset) {
            return Err(RotationError::PrecisionLoss);
        }
        let l = offset as u64 + 1;
        if !p.is_hit(l) {
            return Err(RotationError::PrecisionLoss);
        }
        Ok(l)
    }

    /// Return by table lookup on the piece containing the current offset;
    /// `None` near a cut point or for degenerate structures.
    #[inline]
    fn piece_step(&mut self) -> Option<u64> {
        let (cut_a, cut_b) = self.cuts?;
        let y = self.offset.hi;
        let s = &self.structure;
        let (r, disp) = if y < cut_a - CUT_GUARD {
            (s.a, self.disp_a)
        } else if y >= cut_b + CUT_GUARD {
            (s.b, self.disp_b)
        } else if y >= cut_a + CUT_GUARD && y < cut_b - CUT_GUARD {
            (s.a + s.b, self.disp_ab)
        } else {
            return None;
        };
        self.offset = self.offset + disp;
        Some(self.last + r)
    }

    pub fn next_hit(&mut self) -> Result<u64, RotationError> {
        let p = self.params;
        let h = p.half_width();
        let mut exact = self.last == 0 || self.since_sync >= STREAM_RESYNC;
        let next = if self.last == 0 {
            self.first_hit()?
        } else if let Some(step) = self.piece_step() {
            step
        } else {
            let from = self.last;
            let mut found = None;
            for &(r, disp) in &self.candidates[..self.n_candidates] {
                let z = centred(self.offset + disp);
                let margin = h - z.abs().to_f64();
                let hit = if margin.abs() > STREAM_GUARD {
                    margin > 0.0
                } else {
                    exact = true;
                    p.is_hit(from + r)
                };
                if hit {
                    self.offset = z;
                    found = Some(from + r);
                    break;
                }
            }
            found.ok_or(RotationError::PrecisionLoss)?
        };
        if next as f64 > MAX_INDEX {
            return Err(RotationError::PrecisionLoss);
        }
        if exact {
            self.offset = centred(p.phase(next));
            self.since_sync = 0;
        }
        self.since_sync += 1;
        self.last = next;
        Ok(next)
    }
}

/// First hitting times via [`HitStream`]; output is identical to
/// [`hitting_times_naive`] on the same input.
pub fn hitting_times_fast(
    params: &RotationParams,
    count: usize,
) -> Result<HitSequence, RotationError> {
    if count == 0 {
        return Ok(HitSequence::default());
    }
    let mut stream = HitStream::new(*params)?;
    let mut m = Vec::with_capacity(count);
    for _ in 0..count {
        m.push(stream.next_hit()?);
    }
    Ok(HitSequence::from_hitting_times(m))
}

/// Hit generator that runs the accelerated stream and drops to the naive
/// scan, from the last confirmed hit, if the stream reports precision loss.
#[derive(Clone, Debug)]
pub enum HitSource {
    Fast(HitStream),
    Naive(NaiveScan),
}

impl HitSource {
    pub fn new(params: RotationParams) -> Self {
        match HitStream::new(params) {
            Ok(s) => HitSource::Fast(s),
            Err(_) => HitSource::Naive(NaiveScan::new(params)),
        }
    }

    /// Next hitting time not exceeding `limit`.
    pub fn next_hit(&mut self, limit: u64) -> Option<u64> {
        loop {
            match self {
                HitSource::Fast(stream) => {
                    let saved = (stream.last, stream.offset, stream.since_sync);
                    match stream.next_hit() {
                        Ok(l) if l <= limit => return Some(l),
                        Ok(_) => {
                            // Past the limit: keep the stream where it was so a
                            // later call with a larger limit resumes correctly.
                            (stream.last, stream.offset, stream.since_sync) = saved;
                            return None;
                        }
                        Err(_) => {
                            *self = HitSource::Naive(NaiveScan::starting_after(
                                stream.params,
                                saved.0,
                            ));
                        }
                    }
                }
                HitSource::Naive(scan) => return scan.next_hit(limit),
            }
        }
    }

    pub fn is_fast(&self) -> bool {
        matches!(self, HitSource::Fast(_))
    }
}

/// `Q = (first j with n_1 - n_2 + ... + (-1)^(j+1) n_j <= 0) - 1`, or `None`
/// when no prefix of `n` reaches a nonpositive sum yet.
pub fn exit_index(n: &[u64]) -> Option<usize> {
    let mut sum = 0i64;
    for (idx, &nk) in n.iter().enumerate() {
        if idx % 2 == 0 {
            sum += nk as i64;
        } else {
            sum -= nk as i64;
        }
        if sum <= 0 {
            return Some(idx);
        }
    }
    None
}

/// Sum `n_1 + n_3 + ... + n_q` of the rightward legs.
pub fn odd_return_sum(n: &[u64], q: usize) -> Result<u64, RotationError> {
    if q % 2 == 0 {
        return Err(RotationError::ParityError(q));
    }
    if n.len() < q {
        return Err(RotationError::TooShort {
            need: q,
            have: n.len(),
        });
    }
    Ok(n[..q].iter().step_by(2).sum())
}

/// Time spent in the tube at unit speed, `2 sqrt(1 + slope^2) (n_1 + n_3 + ... + n_q)`.
pub fn flight_time(n: &[u64], q: usize, slope: f64) -> Result<f64, RotationError> {
    let s = odd_return_sum(n, q)?;
    Ok(2.0 * slope.hypot(1.0) * s as f64)
}

/// Number of hits `l` in `(0, floor(horizon/eps)]`.
pub fn visit_count(params: &RotationParams, horizon: f64) -> u64 {
    if !(horizon > 0.0) {
        return 0;
    }
    let limit = (horizon / params.epsilon).floor();
    let limit = if limit >= u64::MAX as f64 {
        u64::MAX
    } else {
        limit as u64
    };
    let mut source = HitSource::new(*params);
    let mut count = 0;
    while source.next_hit(limit).is_some() {
        count += 1;
    }
    count
}

/// Rescaled position `eps * xi_eps(s)` of the particle in the bi-infinite
/// tube, moving at horizontal speed `1/eps`.
pub fn continuous_position(hits: &HitSequence, epsilon: f64, s: f64) -> Result<f64, RotationError> {
    let k = hits.m.partition_point(|&mk| epsilon * mk as f64 <= s);
    if k == hits.len() {
        return Err(RotationError::HorizonExceeded { s });
    }
    if k == 0 {
        return Ok(s);
    }
    let mk = epsilon * hits.m[k - 1] as f64;
    let base = epsilon * hits.xi[k - 1] as f64;
    let dir = if k % 2 == 0 { 1.0 } else { -1.0 };
    Ok(base + dir * (s - mk))
}
