//! Analytic reference trajectories with exact first and second derivatives.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::N_BASE;
use super::payload::PayloadSchedule;
use crate::error::{Error, Result};

/// Pick height (box) and place height (table), metres.
pub const PICK_HEIGHT: f64 = 0.10;
pub const PLACE_HEIGHT: f64 = 0.55;

/// Joint ranges during pick-and-place, radians.
pub const Q1_RANGE: (f64, f64) = (-20.1 * PI / 180.0, 37.2 * PI / 180.0);
pub const Q2_RANGE: (f64, f64) = (65.3 * PI / 180.0, 77.2 * PI / 180.0);

const S_SHAPE_SPAN: f64 = 2.0;
const S_SHAPE_DWELL: f64 = 0.5;
const FIG8_HALF_WIDTH: f64 = 1.0;
const FIG8_HALF_HEIGHT: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    SShape,
    Figure8,
    RandomizedExcitation,
}

impl std::str::FromStr for TrajectoryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s_shape" => Ok(Self::SShape),
            "figure8" => Ok(Self::Figure8),
            "randomized_excitation" => Ok(Self::RandomizedExcitation),
            _ => Err(Error::Unknown { kind: "trajectory kind", name: s.to_string() }),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Desired {
    pub pos: DVector<f64>,
    pub vel: DVector<f64>,
    pub acc: DVector<f64>,
}

#[derive(Clone, Copy, Debug)]
struct Sine {
    amp: f64,
    omega: f64,
    phase: f64,
}

impl Sine {
    fn eval(&self, t: f64) -> (f64, f64, f64) {
        let a = self.omega * t + self.phase;
        let (s, c) = a.sin_cos();
        (self.amp * s, self.amp * self.omega * c, -self.amp * self.omega * self.omega * s)
    }
}

#[derive(Clone, Debug)]
enum Shape {
    SShape { seg_time: f64, path_len: f64 },
    Figure8 { omega: f64, phase: f64 },
    Random { offsets: Vec<f64>, sines: Vec<Vec<Sine>> },
}

#[derive(Clone, Debug)]
pub struct ReferenceTrajectory {
    kind: TrajectoryKind,
    n: usize,
    speed: f64,
    duration: f64,
    shape: Shape,
}

/// Minimum-jerk time scaling `s(u)` on `u in [0, 1]` and its derivatives in `u`.
fn min_jerk(u: f64) -> (f64, f64, f64) {
    let u = u.clamp(0.0, 1.0);
    let (u2, u3) = (u * u, u * u * u);
    (
        10.0 * u3 - 15.0 * u3 * u + 6.0 * u3 * u2,
        30.0 * u2 - 60.0 * u3 + 30.0 * u3 * u,
        60.0 * u - 180.0 * u2 + 120.0 * u3,
    )
}

/// Altitude profile along the S path, as a function of path parameter `s`.
fn s_altitude(s: f64) -> (f64, f64, f64) {
    let dz = PLACE_HEIGHT - PICK_HEIGHT;
    (
        PICK_HEIGHT + dz * (3.0 * s * s - 2.0 * s * s * s),
        dz * (6.0 * s - 6.0 * s * s),
        dz * (6.0 - 12.0 * s),
    )
}

/// Composite Simpson rule on `n` (rounded up to even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

impl ReferenceTrajectory {
    /// `n` is the plant DOF count (3 base coordinates plus arm joints).
    pub fn new(kind: TrajectoryKind, n: usize, speed: f64, duration: f64, seed: u64) -> Result<Self> {
        if !(speed > 0.0) {
            return Err(Error::InvalidParameter(format!("speed must be positive, got {speed}")));
        }
        if n < N_BASE {
            return Err(Error::Dimension(format!("trajectory needs n >= {N_BASE}, got {n}")));
        }
        let shape = match kind {
            TrajectoryKind::SShape => {
                let path_len = simpson(
                    |s| {
                        let (_, dz, _) = s_altitude(s);
                        (S_SHAPE_SPAN * S_SHAPE_SPAN + dz * dz).sqrt()
                    },
                    0.0,
                    1.0,
                    2000,
                );
                Shape::SShape { seg_time: path_len / speed, path_len }
            }
            TrajectoryKind::Figure8 => {
                let len = Self::figure8_period_length();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let phase = if seed == 0 { 0.0 } else { rng.random_range(0.0..2.0 * PI) };
                Shape::Figure8 { omega: 2.0 * PI * speed / len, phase }
            }
            TrajectoryKind::RandomizedExcitation => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut offsets = vec![0.0; n];
                let mut sines = Vec::with_capacity(n);
                for i in 0..n {
                    // a slow sweep over the task workspace plus three faster
                    // components sharing the peak rate
                    let (peak, offset, sweep) = match i {
                        0 => (speed, 0.5, 1.3),
                        1 => (0.6 * speed, 0.35, 0.3),
                        2 => (0.5, 0.0, 0.0),
                        3 => (1.2, 0.5 * (Q1_RANGE.0 + Q1_RANGE.1), 0.6 * (Q1_RANGE.1 - Q1_RANGE.0)),
                        4 => (1.2, 0.5 * (Q2_RANGE.0 + Q2_RANGE.1), 0.6 * (Q2_RANGE.1 - Q2_RANGE.0)),
                        _ => (1.0, 0.0, 0.0),
                    };
                    offsets[i] = offset;
                    let mut comps: Vec<Sine> = (0..3)
                        .map(|_| {
                            let omega = 2.0 * PI * rng.random_range(0.1..0.9);
                            let amp = peak / (3.0 * omega) * rng.random_range(0.5..1.0);
                            Sine { amp, omega, phase: rng.random_range(0.0..2.0 * PI) }
                        })
                        .collect();
                    if sweep > 0.0 {
                        let omega = 2.0 * PI * rng.random_range(0.03..0.06);
                        comps.push(Sine { amp: sweep, omega, phase: rng.random_range(0.0..2.0 * PI) });
                    }
                    sines.push(comps);
                }
                Shape::Random { offsets, sines }
            }
        };
        Ok(Self { kind, n, speed, duration, shape })
    }

    /// Arc length of one figure-8 period (independent of speed).
    fn figure8_period_length() -> f64 {
        simpson(
            |th| {
                let dx = FIG8_HALF_WIDTH * th.cos();
                let dz = 2.0 * FIG8_HALF_HEIGHT * (2.0 * th).cos();
                (dx * dx + dz * dz).sqrt()
            },
            0.0,
            2.0 * PI,
            4000,
        )
    }

    pub fn kind(&self) -> TrajectoryKind {
        self.kind
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    /// Figure-8 period in seconds, if applicable.
    pub fn period(&self) -> Option<f64> {
        match self.shape {
            Shape::Figure8 { omega, .. } => Some(2.0 * PI / omega),
            Shape::SShape { seg_time, .. } => Some(2.0 * (seg_time + S_SHAPE_DWELL)),
            Shape::Random { .. } => None,
        }
    }

    /// S-shape: carry the payload up to the table and release it when leaving.
    pub fn payload_schedule(&self, mass: f64) -> PayloadSchedule {
        match self.shape {
            Shape::SShape { seg_time, .. } => {
                let cycle = 2.0 * (seg_time + S_SHAPE_DWELL);
                let mut events = Vec::new();
                let mut t = 0.0;
                while t < self.duration + cycle {
                    events.push((t, mass));
                    events.push((t + seg_time + S_SHAPE_DWELL, 0.0));
                    t += cycle;
                }
                PayloadSchedule::new(events).expect("increasing by construction")
            }
            _ => PayloadSchedule::constant(mass),
        }
    }

    pub fn sample(&self, t: f64) -> Desired {
        let n = self.n;
        let mut d = Desired { pos: DVector::zeros(n), vel: DVector::zeros(n), acc: DVector::zeros(n) };
        match &self.shape {
            Shape::SShape { seg_time, .. } => {
                let cycle = 2.0 * (seg_time + S_SHAPE_DWELL);
                let tc = t.rem_euclid(cycle);
                let half = seg_time + S_SHAPE_DWELL;
                // outbound during [0, seg_time), dwell, return during [half, half + seg_time)
                let (local, outbound) = if tc < half { (tc, true) } else { (tc - half, false) };
                let (s0, ds0, dds0) = min_jerk(local / seg_time);
                let (ds0, dds0) = (ds0 / seg_time, dds0 / (seg_time * seg_time));
                let (s, ds, dds) = if outbound { (s0, ds0, dds0) } else { (1.0 - s0, -ds0, -dds0) };
                let (z, dz, ddz) = s_altitude(s);
                d.pos[0] = S_SHAPE_SPAN * s;
                d.vel[0] = S_SHAPE_SPAN * ds;
                d.acc[0] = S_SHAPE_SPAN * dds;
                d.pos[1] = z;
                d.vel[1] = dz * ds;
                d.acc[1] = ddz * ds * ds + dz * dds;
                if n > N_BASE {
                    let (lo, hi) = Q1_RANGE;
                    d.pos[3] = lo + (hi - lo) * s;
                    d.vel[3] = (hi - lo) * ds;
                    d.acc[3] = (hi - lo) * dds;
                }
                if n > N_BASE + 1 {
                    let (lo, hi) = Q2_RANGE;
                    // elbow opens mid-transfer and closes again: 4 s (1 - s)
                    let b = 4.0 * s * (1.0 - s);
                    let db = 4.0 - 8.0 * s;
                    d.pos[4] = lo + (hi - lo) * b;
                    d.vel[4] = (hi - lo) * db * ds;
                    d.acc[4] = (hi - lo) * (-8.0 * ds * ds + db * dds);
                }
            }
            Shape::Figure8 { omega, phase } => {
                let x = Sine { amp: FIG8_HALF_WIDTH, omega: *omega, phase: *phase };
                let z = Sine { amp: FIG8_HALF_HEIGHT, omega: 2.0 * omega, phase: 2.0 * phase };
                let (p, v, a) = x.eval(t);
                d.pos[0] = p;
                d.vel[0] = v;
                d.acc[0] = a;
                let (p, v, a) = z.eval(t);
                d.pos[1] = PLACE_HEIGHT + p;
                d.vel[1] = v;
                d.acc[1] = a;
                let ranges = [Q1_RANGE, Q2_RANGE];
                for (j, (lo, hi)) in ranges.iter().enumerate().take(n - N_BASE) {
                    let s = Sine { amp: 0.5 * (hi - lo), omega: *omega, phase: *phase + j as f64 };
                    let (p, v, a) = s.eval(t);
                    d.pos[N_BASE + j] = 0.5 * (lo + hi) + p;
                    d.vel[N_BASE + j] = v;
                    d.acc[N_BASE + j] = a;
                }
            }
            Shape::Random { offsets, sines } => {
                for i in 0..n {
                    d.pos[i] = offsets[i];
                    for s in &sines[i] {
                        let (p, v, a) = s.eval(t);
                        d.pos[i] += p;
                        d.vel[i] += v;
                        d.acc[i] += a;
                    }
                }
            }
        }
        d
    }

    /// Path length of one S transfer, for reporting.
    pub fn transfer_length(&self) -> Option<f64> {
        match self.shape {
            Shape::SShape { path_len, .. } => Some(path_len),
            _ => None,
        }
    }
}
