//! Event-driven ray tracing in the barrier tube, and exit bookkeeping.
//!
//! The tube is `[0, inf) x [0, 1]` with zero-thickness barriers
//! `{n} x [0, eps/2]` and `{n} x [1 - eps/2, 1]` for every integer `n >= 1`.
//! The tracer works in the vertically unfolded picture: the unfolded height
//! after horizontal distance `D` is `u = y_in + slope * D`, every integer
//! crossed by `u` is a reflection off a horizontal wall, and the physical
//! height is the tent-fold of `u mod 2`. This makes the tracer independent of
//! the rotation arithmetic it is used to check.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::dd::Dd;
use crate::rotation::{self, RotationError, RotationParams};

/// Distance from a barrier tip or base below which a trajectory is rejected.
pub const CORNER_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_EVENTS: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilliardError {
    #[error("invalid initial condition: {0}")]
    InvalidInput(String),
    #[error("trajectory passes within tolerance of a barrier corner at ({x}, {y})")]
    CornerHit { x: f64, y: f64 },
    #[error(transparent)]
    Rotation(#[from] RotationError),
}

/// Entry height and direction; the direction angle is `pi * phi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InitialCondition {
    pub y_in: f64,
    pub phi: f64,
    slope: f64,
}

impl InitialCondition {
    pub fn new(y_in: f64, phi: f64) -> Result<Self, BilliardError> {
        if !(phi > -0.5 && phi < 0.5) {
            return Err(BilliardError::InvalidInput(format!(
                "phi must lie in (-1/2, 1/2), got {phi}"
            )));
        }
        Self::build(y_in, phi, (std::f64::consts::PI * phi).tan())
    }

    /// Initial condition with an exactly specified slope `tan(pi * phi)`.
    pub fn from_slope(y_in: f64, slope: f64) -> Result<Self, BilliardError> {
        if !slope.is_finite() {
            return Err(BilliardError::InvalidInput(format!(
                "slope must be finite, got {slope}"
            )));
        }
        Self::build(y_in, slope.atan() / std::f64::consts::PI, slope)
    }

    fn build(y_in: f64, phi: f64, slope: f64) -> Result<Self, BilliardError> {
        if !(y_in > 0.0 && y_in < 1.0) {
            return Err(BilliardError::InvalidInput(format!(
                "y_in must lie in (0, 1), got {y_in}"
            )));
        }
        Ok(InitialCondition { y_in, phi, slope })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    /// The rotation whose window visits are this trajectory's barrier hits.
    pub fn rotation(&self, epsilon: f64) -> Result<RotationParams, RotationError> {
        RotationParams::new(self.y_in, self.slope, epsilon)
    }
}

/// Exit data and certificates of one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExitRecord {
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "T")]
    pub t: f64,
    pub y_out: f64,
    pub zeta_bar: f64,
    pub h_count: u64,
    pub reversed: bool,
    pub z_dist: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Vertical,
    Horizontal,
    Exit,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Vertical => "vertical",
            EventKind::Horizontal => "horizontal",
            EventKind::Exit => "exit",
        }
    }
}

/// A reflection or the exit; the velocity is the one after the event.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Event {
    pub kind: EventKind,
    pub x: f64,
    pub y: f64,
    pub t: f64,
    pub vx: f64,
    pub vy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Terminal {
    Exit(ExitRecord),
    Cutoff { events: u64, distance: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub events: Vec<Event>,
    /// Abscissae of the vertical reflections, in order.
    pub vertical_x: Vec<i64>,
    pub terminal: Terminal,
}

impl TrajectoryRecord {
    pub fn exit(&self) -> Option<&ExitRecord> {
        match &self.terminal {
            Terminal::Exit(e) => Some(e),
            Terminal::Cutoff { .. } => None,
        }
    }

    /// CSV with header `event,kind,x,y,t`.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["event", "kind", "x", "y", "t"])?;
        for (i, e) in self.events.iter().enumerate() {
            out.write_record([
                i.to_string(),
                e.kind.as_str().to_string(),
                format!("{:.16e}", e.x),
                format!("{:.16e}", e.y),
                format!("{:.16e}", e.t),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `t mod 2` folded by the tent map onto `[0, 1]`.
fn fold(u: Dd) -> Dd {
    let r = (u.mul_f64(0.5)).fract().mul_f64(2.0);
    if r.le_f64(1.0) {
        r
    } else {
        Dd::from(2.0) - r
    }
}

fn unfolded(y_in: f64, slope: f64, d: u64) -> Dd {
    Dd::product(slope, d as f64).add_f64(y_in)
}

/// Traces the trajectory until it leaves through `x = 0`, hits a corner, or
/// has produced `max_events` events (or travelled `max_events` horizontal
/// units without any).
pub fn trace(
    ic: &InitialCondition,
    epsilon: f64,
    max_events: u64,
) -> Result<TrajectoryRecord, BilliardError> {
    run(ic, epsilon, max_events, true)
}

/// Like [`trace`] but records only the vertical reflections, counting
/// horizontal ones without materialising them.
pub fn trace_summary(
    ic: &InitialCondition,
    epsilon: f64,
    max_events: u64,
) -> Result<TrajectoryRecord, BilliardError> {
    run(ic, epsilon, max_events, false)
}

fn run(
    ic: &InitialCondition,
    epsilon: f64,
    max_events: u64,
    record: bool,
) -> Result<TrajectoryRecord, BilliardError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(BilliardError::InvalidInput(format!(
            "epsilon must lie in (0, 1), got {epsilon}"
        )));
    }
    let slope = ic.slope;
    let speed = slope.hypot(1.0);
    let (cx, sy) = (1.0 / speed, slope / speed);
    let mut events = Vec::new();
    let mut vertical_x = Vec::new();
    if slope == 0.0 {
        // Horizontal motion at an interior height never meets a barrier.
        return Ok(TrajectoryRecord {
            events,
            vertical_x,
            terminal: Terminal::Cutoff {
                events: 0,
                distance: 0,
            },
        });
    }

    let half = 0.5 * epsilon;
    let upper = Dd::sum(1.0, -half);
    let mut x: i64 = 0;
    let mut dir: i64 = 1;
    let mut d: u64 = 0;
    let mut n_events: u64 = 0;
    let mut h_count: u64 = 0;
    let mut u0 = Dd::from(ic.y_in);

    loop {
        if n_events >= max_events || d >= max_events {
            return Ok(TrajectoryRecord {
                events,
                vertical_x,
                terminal: Terminal::Cutoff {
                    events: n_events,
                    distance: d,
                },
            });
        }
        let u1 = unfolded(ic.y_in, slope, d + 1);
        let next_x = x + dir;

        // Walls crossed strictly inside this unit of travel.
        let (lo, hi) = if slope > 0.0 { (u0, u1) } else { (u1, u0) };
        let first = lo.floor().to_f64() + 1.0;
        let last = hi.ceil().to_f64() - 1.0;
        if last >= first {
            let crossings = (last - first) as u64 + 1;
            if record {
                for i in 0..crossings {
                    let j = if slope > 0.0 {
                        first + i as f64
                    } else {
                        last - i as f64
                    };
                    let tau = ((Dd::from(j) - u0) / Dd::from(slope)).to_f64();
                    let above = (j as i64).rem_euclid(2) == 1;
                    // Folded vertical velocity after the wall: down off the
                    // top wall, up off the bottom one.
                    let vy = if above { -sy.abs() } else { sy.abs() };
                    events.push(Event {
                        kind: EventKind::Horizontal,
                        x: x as f64 + dir as f64 * tau,
                        y: if above { 1.0 } else { 0.0 },
                        t: (d as f64 + tau) * speed,
                        vx: dir as f64 * cx,
                        vy,
                    });
                }
            }
            n_events += crossings;
            h_count += crossings;
        }

        d += 1;
        let y = fold(u1);
        let yf = y.to_f64();
        let vy_here = {
            let sheet = u1.floor().to_f64() as i64;
            if sheet.rem_euclid(2) == 0 {
                sy
            } else {
                -sy
            }
        };

        if next_x == 0 {
            let t = d as f64 * speed;
            let q = vertical_x.len();
            let z = (u1.add_f64(ic.y_in)).mul_f64(0.5);
            let exit = ExitRecord {
                q,
                t,
                y_out: yf,
                zeta_bar: u1.to_f64(),
                h_count,
                reversed: q % 2 == 1 && h_count % 2 == 1,
                z_dist: z.dist_to_int().to_f64(),
            };
            if record {
                events.push(Event {
                    kind: EventKind::Exit,
                    x: 0.0,
                    y: yf,
                    t,
                    vx: dir as f64 * cx,
                    vy: vy_here,
                });
            }
            return Ok(TrajectoryRecord {
                events,
                vertical_x,
                terminal: Terminal::Exit(exit),
            });
        }

        let near_corner = (yf - half).abs() < CORNER_TOLERANCE
            || (yf - (1.0 - half)).abs() < CORNER_TOLERANCE
            || yf < CORNER_TOLERANCE
            || yf > 1.0 - CORNER_TOLERANCE;
        if near_corner {
            return Err(BilliardError::CornerHit {
                x: next_x as f64,
                y: yf,
            });
        }
        if y.le_f64(half) || y >= upper {
            dir = -dir;
            vertical_x.push(next_x);
            n_events += 1;
            if record {
                events.push(Event {
                    kind: EventKind::Vertical,
                    x: next_x as f64,
                    y: yf,
                    t: d as f64 * speed,
                    vx: dir as f64 * cx,
                    vy: vy_here,
                });
            }
        }
        x = next_x;
        u0 = u1;
    }
}

/// Exit record from the rotation data: `Q` and the rightward leg total
/// `n_1 + n_3 + ... + n_Q`.
pub fn exit_record_from_parts(
    ic: &InitialCondition,
    q: usize,
    odd_sum: u64,
) -> Result<ExitRecord, RotationError> {
    if q % 2 == 0 {
        return Err(RotationError::ParityError(q));
    }
    let z = Dd::product(ic.slope, odd_sum as f64).add_f64(ic.y_in);
    let zeta = z.mul_f64(2.0).add_f64(-ic.y_in);
    // Walls crossed between y_in and the unfolded exit height; the exit
    // height is negative for downward slopes.
    let h_count = zeta.floor().to_f64().abs() as u64;
    Ok(ExitRecord {
        q,
        t: 2.0 * ic.slope.hypot(1.0) * odd_sum as f64,
        y_out: fold(zeta).to_f64(),
        zeta_bar: zeta.to_f64(),
        h_count,
        reversed: h_count % 2 == 1,
        z_dist: z.dist_to_int().to_f64(),
    })
}

pub fn exit_record_from_returns(
    ic: &InitialCondition,
    n: &[u64],
    q: usize,
) -> Result<ExitRecord, RotationError> {
    let s = rotation::odd_return_sum(n, q)?;
    exit_record_from_parts(ic, q, s)
}

/// `eps * Q < min(y_in, 1 - y_in)`, which forces a reversed exit.
pub fn reversal_sufficient(ic: &InitialCondition, epsilon: f64, q: usize) -> bool {
    epsilon * (q as f64) < ic.y_in.min(1.0 - ic.y_in)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked() -> InitialCondition {
        InitialCondition::from_slope(0.9, 0.2).unwrap()
    }

    #[test]
    fn single_bounce_trace() {
        let rec = trace(&worked(), 0.3, 100).unwrap();
        let e = rec.exit().unwrap();
        assert_eq!(e.q, 1);
        assert_eq!(rec.vertical_x, vec![1]);
        assert!((e.zeta_bar - 1.3).abs() < 1e-15);
        assert!((e.y_out - 0.7).abs() < 1e-15);
        assert_eq!(e.h_count, 1);
        assert!(e.reversed);
        assert!((e.z_dist - 0.1).abs() < 1e-15);
        let kinds: Vec<_> = rec.events.iter().map(|e| e.kind).collect();
        assert_eq!(
            kinds,
            vec![EventKind::Horizontal, EventKind::Vertical, EventKind::Exit]
        );
        assert!((rec.events[0].x - 0.5).abs() < 1e-15);
        assert_eq!(rec.events[0].y, 1.0);
    }

    #[test]
    fn periodic_miss_is_cutoff() {
        let ic = InitialCondition::new(0.5, 0.25).unwrap();
        assert!((ic.slope() - 1.0).abs() < 1e-15);
        let rec = trace(&ic, 0.3, 1000).unwrap();
        assert!(matches!(rec.terminal, Terminal::Cutoff { .. }));
        assert!(rec.vertical_x.is_empty());
    }

    #[test]
    fn horizontal_motion_is_cutoff() {
        let ic = InitialCondition::new(0.5, 0.0).unwrap();
        let rec = trace(&ic, 0.3, 1000).unwrap();
        assert!(rec.events.is_empty());
        assert!(matches!(rec.terminal, Terminal::Cutoff { .. }));
    }

    #[test]
    fn corner_hit_is_rejected() {
        // Reaches height 0.85 = 1 - eps/2 exactly at x = 1.
        let ic = InitialCondition::from_slope(0.5, 0.35).unwrap();
        assert!(matches!(
            trace(&ic, 0.3, 100),
            Err(BilliardError::CornerHit { .. })
        ));
    }

    #[test]
    fn events_have_unit_speed_and_increasing_times() {
        let ic = InitialCondition::new(0.37, 0.41).unwrap();
        let rec = trace(&ic, 0.05, 100_000).unwrap();
        let mut last = 0.0;
        for e in &rec.events {
            assert!((e.vx.hypot(e.vy) - 1.0).abs() < 1e-12);
            assert!(e.t > last);
            assert!((0.0..=1.0).contains(&e.y));
            last = e.t;
        }
        for w in rec.events.windows(2) {
            let flips =
                usize::from(w[0].vx != w[1].vx) + usize::from(w[0].vy != w[1].vy);
            if w[1].kind != EventKind::Exit {
                assert_eq!(flips, 1);
            }
        }
    }

    #[test]
    fn exit_record_examples() {
        let e = exit_record_from_returns(&worked(), &[1, 4], 1).unwrap();
        assert!((e.zeta_bar - 1.3).abs() < 1e-15);
        assert_eq!(e.h_count, 1);
        assert!((e.y_out - 0.7).abs() < 1e-15);
        assert!(e.reversed);
        assert!((e.z_dist - 0.1).abs() < 1e-15);
        assert!(e.z_dist <= 0.3 / 2.0);

        let flat = InitialCondition::from_slope(0.5, 0.0).unwrap();
        let e = exit_record_from_returns(&flat, &[7], 1).unwrap();
        assert_eq!(e.zeta_bar, 0.5);
        assert_eq!(e.h_count, 0);
        assert!(!e.reversed);

        assert_eq!(
            exit_record_from_returns(&worked(), &[1, 4], 2),
            Err(RotationError::ParityError(2))
        );
    }

    #[test]
    fn reversal_sufficient_examples() {
        assert!(!reversal_sufficient(&worked(), 0.3, 1));
        let mid = InitialCondition::from_slope(0.5, 1.0).unwrap();
        assert!(reversal_sufficient(&mid, 0.01, 3));
        let low = InitialCondition::from_slope(0.001, 1.0).unwrap();
        assert!(!reversal_sufficient(&low, 0.1, 1));
    }

    #[test]
    fn trajectory_csv_header() {
        let rec = trace(&worked(), 0.3, 100).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("event,kind,x,y,t\n0,horizontal,"));
        assert_eq!(s.lines().count(), 4);
    }
}
