//! Event-driven two-ball billiards in the unit box.
//!
//! Balls have equal mass and radius. Within each substep the simulator finds
//! the earliest wall or ball contact in closed form, advances to it, resolves
//! it, and repeats until the substep is exhausted.

use rand::Rng;

use crate::error::{Error, Result};

/// Events allowed inside one substep before the state is declared stuck.
const MAX_EVENTS_PER_SUBSTEP: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
}

/// Two balls in `[0,1]^2`. One-dimensional worlds keep `x = 0.5`, `vx = 0`
/// and move along `y` only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilliardsState {
    pub balls: [Ball; 2],
    pub radius: f64,
    pub dims: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContactKind {
    Wall { ball: usize, axis: usize },
    Balls,
}

/// One resolved contact. `leg_start` is the state at the beginning of the
/// free-flight leg that ended in this contact, `elapsed` the flight time.
#[derive(Debug, Clone)]
pub struct ContactEvent {
    pub kind: ContactKind,
    pub leg_start: BilliardsState,
    pub elapsed: f64,
    pub post: BilliardsState,
}

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

impl BilliardsState {
    pub fn kinetic_energy(&self) -> f64 {
        self.balls.iter().map(|b| 0.5 * dot(b.vel, b.vel)).sum()
    }

    pub fn center_distance(&self) -> f64 {
        let d = [
            self.balls[1].pos[0] - self.balls[0].pos[0],
            self.balls[1].pos[1] - self.balls[0].pos[1],
        ];
        dot(d, d).sqrt()
    }

    fn axes(&self) -> std::ops::Range<usize> {
        if self.dims == 1 {
            1..2
        } else {
            0..2
        }
    }

    /// Coordinates as observed: `[y0, y1]` in 1D, `[x0, y0, x1, y1]` in 2D.
    pub fn coordinates(&self) -> Vec<f64> {
        match self.dims {
            1 => vec![self.balls[0].pos[1], self.balls[1].pos[1]],
            _ => vec![
                self.balls[0].pos[0],
                self.balls[0].pos[1],
                self.balls[1].pos[0],
                self.balls[1].pos[1],
            ],
        }
    }

    /// `[x, y, vx, vy]` for each ball.
    pub fn flat(&self) -> [f64; STATE_DIM] {
        let [a, b] = self.balls;
        [
            a.pos[0], a.pos[1], a.vel[0], a.vel[1], b.pos[0], b.pos[1], b.vel[0], b.vel[1],
        ]
    }

    pub fn with_negated_velocities(mut self) -> Self {
        for b in &mut self.balls {
            b.vel = [-b.vel[0], -b.vel[1]];
        }
        self
    }

    fn advance(&mut self, s: f64) {
        let r = self.radius;
        for b in &mut self.balls {
            for a in 0..2 {
                b.pos[a] = (b.pos[a] + b.vel[a] * s).clamp(r, 1.0 - r);
            }
        }
    }

    /// Checks containment and non-overlap.
    pub fn validate(&self) -> Result<()> {
        let r = self.radius;
        let inside = self
            .balls
            .iter()
            .all(|b| b.pos.iter().all(|&p| p >= r - 1e-12 && p <= 1.0 - r + 1e-12));
        let finite = self
            .balls
            .iter()
            .all(|b| b.pos.iter().chain(&b.vel).all(|x| x.is_finite()));
        if !inside || !finite || self.center_distance() < 2.0 * r - 1e-9 {
            return Err(Error::Simulation {
                reason: "invalid billiards state".into(),
                state: format!("{self:?}"),
            });
        }
        Ok(())
    }
}

pub const STATE_DIM: usize = 8;

/// Flight time until the first contact, with its kind.
fn next_contact(state: &BilliardsState) -> Option<(f64, ContactKind)> {
    let r = state.radius;
    let mut best: Option<(f64, ContactKind)> = None;
    let mut consider = |s: f64, kind| {
        if best.map_or(true, |(b, _)| s < b) {
            best = Some((s, kind));
        }
    };
    for (i, b) in state.balls.iter().enumerate() {
        for axis in state.axes() {
            let (p, v) = (b.pos[axis], b.vel[axis]);
            if v > 0.0 {
                consider(((1.0 - r - p) / v).max(0.0), ContactKind::Wall { ball: i, axis });
            } else if v < 0.0 {
                consider(((r - p) / v).max(0.0), ContactKind::Wall { ball: i, axis });
            }
        }
    }
    let [b0, b1] = state.balls;
    let d = [b1.pos[0] - b0.pos[0], b1.pos[1] - b0.pos[1]];
    let w = [b1.vel[0] - b0.vel[0], b1.vel[1] - b0.vel[1]];
    let dw = dot(d, w);
    if dw < 0.0 {
        let a = dot(w, w);
        let c = dot(d, d) - 4.0 * r * r;
        if c <= 0.0 {
            consider(0.0, ContactKind::Balls);
        } else {
            let disc = dw * dw - a * c;
            if disc >= 0.0 {
                // smaller root of a s^2 + 2 dw s + c, in cancellation-free form
                consider(c / (-dw + disc.sqrt()), ContactKind::Balls);
            }
        }
    }
    best
}

fn resolve(state: &mut BilliardsState, kind: ContactKind) {
    let r = state.radius;
    match kind {
        ContactKind::Wall { ball, axis } => {
            let b = &mut state.balls[ball];
            b.vel[axis] = -b.vel[axis];
            b.pos[axis] = if b.vel[axis] < 0.0 { 1.0 - r } else { r };
        }
        ContactKind::Balls => {
            let [b0, b1] = state.balls;
            let d = [b1.pos[0] - b0.pos[0], b1.pos[1] - b0.pos[1]];
            let len = dot(d, d).sqrt();
            let n = [d[0] / len, d[1] / len];
            let w = [b0.vel[0] - b1.vel[0], b0.vel[1] - b1.vel[1]];
            let j = dot(w, n);
            for a in 0..2 {
                state.balls[0].vel[a] -= j * n[a];
                state.balls[1].vel[a] += j * n[a];
            }
        }
    }
}

/// Integrator configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simulator {
    pub substeps: usize,
}

impl Default for Simulator {
    fn default() -> Self {
        Self { substeps: 10 }
    }
}

impl Simulator {
    pub fn new(substeps: usize) -> Self {
        Self {
            substeps: substeps.max(1),
        }
    }

    pub fn step(&self, state: &BilliardsState, dt: f64) -> Result<BilliardsState> {
        self.step_logged(state, dt, &mut Vec::new())
    }

    /// Advances by `dt`, appending every resolved contact to `log`.
    pub fn step_logged(
        &self,
        state: &BilliardsState,
        dt: f64,
        log: &mut Vec<ContactEvent>,
    ) -> Result<BilliardsState> {
        state.validate()?;
        let mut s = *state;
        let h = dt / self.substeps as f64;
        for _ in 0..self.substeps {
            let mut remaining = h;
            let mut events = 0;
            loop {
                match next_contact(&s) {
                    Some((t, kind)) if t <= remaining => {
                        let leg_start = s;
                        s.advance(t);
                        resolve(&mut s, kind);
                        remaining -= t;
                        log.push(ContactEvent {
                            kind,
                            leg_start,
                            elapsed: t,
                            post: s,
                        });
                        events += 1;
                        if events > MAX_EVENTS_PER_SUBSTEP {
                            return Err(Error::Simulation {
                                reason: format!(
                                    "more than {MAX_EVENTS_PER_SUBSTEP} contacts in one substep"
                                ),
                                state: format!("{s:?}"),
                            });
                        }
                    }
                    _ => {
                        s.advance(remaining);
                        break;
                    }
                }
            }
        }
        Ok(s)
    }
}

/// Random non-overlapping positions with speeds uniform in `speed`.
pub fn random_state(
    rng: &mut impl Rng,
    dims: usize,
    radius: f64,
    speed: (f64, f64),
) -> BilliardsState {
    let mut balls = [Ball {
        pos: [0.5, 0.5],
        vel: [0.0, 0.0],
    }; 2];
    loop {
        for b in &mut balls {
            if dims == 2 {
                b.pos[0] = rng.gen_range(radius..1.0 - radius);
            }
            b.pos[1] = rng.gen_range(radius..1.0 - radius);
        }
        let s = BilliardsState {
            balls,
            radius,
            dims,
        };
        if s.center_distance() > 2.0 * radius + 1e-6 {
            break;
        }
    }
    for b in &mut balls {
        let v = rng.gen_range(speed.0..speed.1);
        if dims == 2 {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            b.vel = [v * angle.cos(), v * angle.sin()];
        } else {
            b.vel = [0.0, if rng.gen_bool(0.5) { v } else { -v }];
        }
    }
    BilliardsState {
        balls,
        radius,
        dims,
    }
}
