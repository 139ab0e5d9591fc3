//! Three-interval exchanges: the first-return map of a rotation to its
//! window, and the return map of the horizontal flow between the unit
//! segments centred at lattice points.
//!
//! Subintervals are left-closed and right-open, except the last one, which
//! also contains the right end of the domain.

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::dd::Dd;
use crate::lattice::{self, AffineLattice, LatticeError, TubeWalker};
use crate::rotation::{self, RotationError};

const TILING_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IetError {
    #[error("point {0} outside the domain of the exchange")]
    OutOfDomain(f64),
    #[error("exchange has fewer than three continuity intervals")]
    Degenerate(Box<Iet3>),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Rotation(#[from] RotationError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// A piecewise translation of `[lo, hi]` with at most three pieces and
/// reversed order of the images, with an optional label per piece.
#[derive(Clone, Debug, PartialEq)]
pub struct Iet3 {
    domain: (f64, f64),
    breaks: Vec<f64>,
    translations: Vec<f64>,
    labels: Option<Vec<f64>>,
}

impl Iet3 {
    pub fn new(
        domain: (f64, f64),
        breaks: Vec<f64>,
        translations: Vec<f64>,
        labels: Option<Vec<f64>>,
    ) -> Result<Self, IetError> {
        if translations.len() != breaks.len() + 1
            || labels.as_ref().is_some_and(|l| l.len() != translations.len())
        {
            return Err(IetError::InvalidParams("piece counts disagree".into()));
        }
        let map = Iet3 {
            domain,
            breaks,
            translations,
            labels,
        };
        if map.lengths().iter().any(|&l| l < 0.0) {
            return Err(IetError::InvalidParams("breaks out of order".into()));
        }
        Ok(map)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn pieces(&self) -> usize {
        self.translations.len()
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn translations(&self) -> &[f64] {
        &self.translations
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        let lo = if i == 0 { self.domain.0 } else { self.breaks[i - 1] };
        let hi = if i == self.breaks.len() { self.domain.1 } else { self.breaks[i] };
        (lo, hi)
    }

    pub fn lengths(&self) -> Vec<f64> {
        (0..self.pieces())
            .map(|i| {
                let (lo, hi) = self.bounds(i);
                hi - lo
            })
            .collect()
    }

    /// Index of the piece containing `y`.
    pub fn piece_of(&self, y: f64) -> Result<usize, IetError> {
        if !(y >= self.domain.0 && y <= self.domain.1) {
            return Err(IetError::OutOfDomain(y));
        }
        Ok(self.breaks.partition_point(|&b| b <= y))
    }

    pub fn apply(&self, y: f64) -> Result<f64, IetError> {
        Ok(y + self.translations[self.piece_of(y)?])
    }

    /// Image and label of `y`.
    pub fn apply_labelled(&self, y: f64) -> Result<(f64, Option<f64>), IetError> {
        let i = self.piece_of(y)?;
        Ok((
            y + self.translations[i],
            self.labels.as_ref().map(|l| l[i]),
        ))
    }

    /// Preimage of `z` under the exchange.
    pub fn apply_inverse(&self, z: f64) -> Result<f64, IetError> {
        if !(z >= self.domain.0 && z <= self.domain.1) {
            return Err(IetError::OutOfDomain(z));
        }
        let mut best = None;
        for i in 0..self.pieces() {
            let (lo, hi) = self.bounds(i);
            let t = self.translations[i];
            let (ilo, ihi) = (lo + t, hi + t);
            let inside = z >= ilo && (z < ihi || (i == self.pieces() - 1 && z <= ihi));
            // Nearest image when rounding leaves `z` in a crack between images.
            let miss = if inside { 0.0 } else { (ilo - z).max(z - ihi) };
            if best.is_none_or(|(_, m)| miss < m) {
                best = Some((i, miss));
            }
        }
        let (i, _) = best.expect("an exchange has at least one piece");
        Ok((z - self.translations[i]).clamp(self.domain.0, self.domain.1))
    }

    /// The images of the pieces tile the domain, up to `1e-12`.
    pub fn tiles_domain(&self) -> bool {
        let mut images: Vec<(f64, f64)> = (0..self.pieces())
            .map(|i| {
                let (lo, hi) = self.bounds(i);
                (lo + self.translations[i], hi + self.translations[i])
            })
            .collect();
        images.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut at = self.domain.0;
        for (lo, hi) in images {
            if (lo - at).abs() > TILING_TOLERANCE {
                return false;
            }
            at = hi;
        }
        (at - self.domain.1).abs() <= TILING_TOLERANCE
    }

    /// Whether the images appear in reversed order, type (3 2 1).
    pub fn is_reversing(&self) -> bool {
        let starts: Vec<f64> = (0..self.pieces())
            .map(|i| self.bounds(i).0 + self.translations[i])
            .collect();
        starts.windows(2).all(|w| w[0] > w[1])
    }

    pub fn orbit(&self, y: f64, n: usize) -> Result<Vec<f64>, IetError> {
        let mut out = Vec::with_capacity(n);
        let mut z = y;
        for _ in 0..n {
            out.push(z);
            z = self.apply(z)?;
        }
        Ok(out)
    }
}

impl Serialize for Iet3 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("Iet3", 4)?;
        st.serialize_field("domain", &[self.domain.0, self.domain.1])?;
        st.serialize_field("lengths", &self.lengths())?;
        st.serialize_field("translations", &self.translations)?;
        st.serialize_field("labels", &self.labels)?;
        st.end()
    }
}

/// First-return map of `y -> y + alpha mod 1` to `[-eps/2, eps/2]`, labelled
/// by return times.
///
/// With `a`, `b` the least times of a return shifted right by `d_a = {a alpha}`
/// and left by `d_b = {-b alpha}`, the pieces are
/// `[-eps/2, eps/2 - d_a)` (time `a`), `[eps/2 - d_a, -eps/2 + d_b)`
/// (time `a + b`) and `[-eps/2 + d_b, eps/2]` (time `b`). The cut points are
/// the preimages of the window endpoints.
pub fn induce_rotation(alpha: f64, epsilon: f64) -> Result<Iet3, IetError> {
    if !(epsilon > 0.0 && epsilon < 1.0) || !alpha.is_finite() {
        return Err(IetError::InvalidParams(format!(
            "need 0 < epsilon < 1 and finite alpha, got ({alpha}, {epsilon})"
        )));
    }
    let s = rotation::return_structure(Dd::from(alpha).fract(), epsilon)?;
    let h = 0.5 * epsilon;
    let (da, db) = (s.shift_a.to_f64(), s.shift_b.to_f64());
    let (ra, rb) = (s.a as f64, s.b as f64);
    let cut_a = (h - da).max(-h);
    let cut_b = db - h;
    if cut_a < cut_b {
        return Iet3::new(
            (-h, h),
            vec![cut_a, cut_b],
            vec![da, da - db, -db],
            Some(vec![ra, ra + rb, rb]),
        );
    }
    let map = Iet3::new((-h, h), vec![cut_a.min(h)], vec![da, -db], Some(vec![ra, rb]))?;
    Err(IetError::Degenerate(Box::new(map)))
}

/// The return map of the rightward horizontal flow on the unit vertical
/// segments centred at the points of a lattice, with horizontal return
/// distances as labels, together with the first tube point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LatticeIet {
    pub iet: Iet3,
    pub psi: [f64; 3],
    /// Seed with `-y0 = T^-1(-y1)`.
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

pub fn lattice_iet(g: &AffineLattice) -> Result<LatticeIet, IetError> {
    let (wa, wb) = lattice::short_tube_vectors(g)?;
    let scale = wa[0].abs().max(wb[0].abs()).max(1.0);
    if (wa[0] - wb[0]).abs() <= TILING_TOLERANCE * scale {
        return Err(LatticeError::DegenerateLattice("return vectors share an abscissa").into());
    }
    if wa[1] - wb[1] <= 1.0 + TILING_TOLERANCE {
        return Err(LatticeError::DegenerateLattice("fewer than three return intervals").into());
    }
    let psi = [wb[0], wa[0] + wb[0], wa[0]];
    let iet = Iet3::new(
        (-0.5, 0.5),
        vec![wb[1] + 0.5, wa[1] - 0.5],
        vec![-wb[1], -(wa[1] + wb[1]), -wa[1]],
        Some(psi.to_vec()),
    )?;
    let mut walker = TubeWalker::new(*g);
    let (x1, y1) = walker
        .next_point(f64::INFINITY)?
        .ok_or(LatticeError::DegenerateLattice("no tube points"))?;
    let y0 = -iet.apply_inverse(-y1)?;
    Ok(LatticeIet {
        iet,
        psi,
        y0,
        x1,
        y1,
    })
}

/// Least even `k <= cutoff` with `v_1 - v_2 + ... - v_k <= 0`.
pub fn first_even_crossing(values: impl IntoIterator<Item = f64>, cutoff: usize) -> Option<usize> {
    let mut sum = 0.0;
    for (i, v) in values.into_iter().take(cutoff).enumerate() {
        if i % 2 == 0 {
            sum += v;
        } else {
            sum -= v;
            if sum <= 0.0 {
                return Some(i + 1);
            }
        }
    }
    None
}

/// Alternating Birkhoff sums of the labels along the orbit of `start`:
/// the least even `k` with `psi(start) - psi(T start) + ... <= 0`.
pub fn birkhoff_exit(map: &Iet3, start: f64, cutoff: usize) -> Result<Option<usize>, IetError> {
    let labels = map
        .labels()
        .ok_or_else(|| IetError::InvalidParams("exchange carries no labels".into()))?;
    let mut y = start;
    let mut sum = 0.0;
    for k in 1..=cutoff {
        let i = map.piece_of(y)?;
        sum += if k % 2 == 1 { labels[i] } else { -labels[i] };
        if k % 2 == 0 && sum <= 0.0 {
            return Ok(Some(k));
        }
        y += map.translations()[i];
    }
    Ok(None)
}

/// The exit crossing of the tube process read off the exchange: the gaps
/// are `x1` followed by `psi` along the orbit of `-y1`, and the result is
/// `Q + 1` for the limit exit index `Q`.
///
/// Seeding the plain Birkhoff sum at `-y0` instead replaces the first gap
/// `x1` by `x1 - x0 >= x1`, which can only delay the crossing.
pub fn exit_crossing(liet: &LatticeIet, cutoff: usize) -> Result<Option<usize>, IetError> {
    let map = &liet.iet;
    let (lo, hi) = map.domain();
    if !(-liet.y1 >= lo && -liet.y1 <= hi) {
        return Err(IetError::OutOfDomain(-liet.y1));
    }
    let [c1, c2] = [map.breaks()[0], map.breaks()[1]];
    let t = map.translations();
    // Orbit point and running sum carried in double-double so that long
    // orbits do not drift across the cut points.
    let mut y = Dd::from(-liet.y1);
    let mut sum = Dd::from(liet.x1);
    for k in 2..=cutoff {
        let i = if y.hi < c1 {
            0
        } else if y.hi < c2 {
            1
        } else {
            2
        };
        if k % 2 == 0 {
            sum = sum.add_f64(-liet.psi[i]);
            if sum.hi <= 0.0 {
                return Ok(Some(k));
            }
        } else {
            sum = sum.add_f64(liet.psi[i]);
        }
        y = y.add_f64(t[i]);
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain iteration of the rotation until the orbit is back in the window.
    fn first_return(alpha: f64, eps: f64, y: f64) -> (f64, u64) {
        let mut z = y;
        for l in 1..10_000_000u64 {
            z += alpha;
            if z > 0.5 {
                z -= 1.0;
            }
            if z.abs() <= eps / 2.0 {
                return (z, l);
            }
        }
        panic!("no return");
    }

    #[test]
    fn induced_rotation_examples() {
        let m = induce_rotation(std::f64::consts::SQRT_2 - 1.0, 0.5).unwrap();
        assert_eq!(m.labels().unwrap(), &[1.0, 3.0, 2.0]);
        let m = induce_rotation(1.0 / std::f64::consts::PI, 0.9).unwrap();
        assert_eq!(m.labels().unwrap(), &[1.0, 2.0, 1.0]);
        assert!(m.tiles_domain());
        assert!(m.is_reversing());
    }

    #[test]
    fn induced_rotation_is_first_return() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let alpha: f64 = rng.random();
            let eps = 10f64.powf(-3.0 * rng.random::<f64>());
            let eps = eps.min(0.9);
            let m = match induce_rotation(alpha, eps) {
                Ok(m) => m,
                Err(IetError::Degenerate(m)) => *m,
                Err(e) => panic!("{e}"),
            };
            for _ in 0..20 {
                let y = eps * (rng.random::<f64>() - 0.5);
                let (img, label) = m.apply_labelled(y).unwrap();
                let (z, l) = first_return(alpha, eps, y);
                assert_eq!(label.unwrap(), l as f64);
                assert!((img - z).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn apply_conventions() {
        let m = Iet3::new((0.0, 1.0), vec![0.2, 0.5], vec![0.8, 0.3, -0.5], None).unwrap();
        assert!(m.tiles_domain());
        assert!((m.apply(0.1).unwrap() - 0.9).abs() < 1e-15);
        // A cut point belongs to the piece on its right.
        assert!((m.apply(0.2).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.apply(1.0).unwrap(), 0.5);
        assert_eq!(m.apply(1.5), Err(IetError::OutOfDomain(1.5)));
        assert!((m.apply_inverse(m.apply(0.3).unwrap()).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn crossing_examples() {
        assert_eq!(first_even_crossing([3.0, 1.0, 2.0, 4.0], 10), Some(4));
        assert_eq!(first_even_crossing(std::iter::repeat(1.7), 10), Some(2));
        assert_eq!(first_even_crossing([3.0, 1.0, 2.0], 10), None);
        let m = Iet3::new((0.0, 1.0), vec![], vec![0.0], Some(vec![2.5])).unwrap();
        assert_eq!(birkhoff_exit(&m, 0.3, 100).unwrap(), Some(2));
    }

    #[test]
    fn square_lattice_is_degenerate() {
        let g = AffineLattice::identity([0.3, 0.2]);
        assert!(matches!(
            lattice_iet(&g),
            Err(IetError::Lattice(LatticeError::DegenerateLattice(_)))
        ));
    }

    #[test]
    fn iet_json_fields() {
        let m = induce_rotation(1.0 / std::f64::consts::PI, 0.9).unwrap();
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["lengths"].as_array().unwrap().len(), 3);
        assert_eq!(v["labels"][1], 2.0);
    }
}
