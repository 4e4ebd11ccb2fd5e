//! Ground-truth data: lines, circles, and two-ball billiards from coordinates
//! or pixels, plus the on-disk dataset format.

pub mod billiards;
mod dataset_io;
pub mod render;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use billiards::{random_state, Ball, BilliardsState, ContactEvent, ContactKind, Simulator, STATE_DIM};
pub use dataset_io::{read_dataset, write_dataset, DATASET_MAGIC};
pub use render::{render_disks, render_pixels, FRAME_PIXELS, FRAME_SIDE};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskId {
    Lines,
    Circles,
    Billiards1d,
    Billiards2d,
    PixBill1d,
    PixBill2d,
}

impl TaskId {
    pub const ALL: [TaskId; 6] = [
        TaskId::Lines,
        TaskId::Circles,
        TaskId::Billiards1d,
        TaskId::Billiards2d,
        TaskId::PixBill1d,
        TaskId::PixBill2d,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::Lines => "lines",
            TaskId::Circles => "circles",
            TaskId::Billiards1d => "billiards1d",
            TaskId::Billiards2d => "billiards2d",
            TaskId::PixBill1d => "pixbill1d",
            TaskId::PixBill2d => "pixbill2d",
        }
    }

    /// Number of transitions per trajectory (observations are `T + 1`).
    pub fn default_horizon(self) -> usize {
        match self {
            TaskId::Lines => 20,
            TaskId::Circles => 24,
            _ => 44,
        }
    }

    pub fn billiards_dims(self) -> Option<usize> {
        match self {
            TaskId::Billiards1d | TaskId::PixBill1d => Some(1),
            TaskId::Billiards2d | TaskId::PixBill2d => Some(2),
            _ => None,
        }
    }

    pub fn is_pixels(self) -> bool {
        matches!(self, TaskId::PixBill1d | TaskId::PixBill2d)
    }

    pub fn obs_dim(self) -> usize {
        match self {
            TaskId::Lines | TaskId::Circles | TaskId::Billiards1d => 2,
            TaskId::Billiards2d => 4,
            TaskId::PixBill1d | TaskId::PixBill2d => FRAME_PIXELS,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown task `{s}`")))
    }
}

/// Physical constants of the generators. Written into dataset headers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldParams {
    pub radius: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub circle_speed: f64,
    pub substeps: usize,
    pub render_radius: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            radius: 0.1,
            speed_min: 0.05,
            speed_max: 0.15,
            circle_speed: 0.3,
            substeps: 10,
            render_radius: 0.1,
        }
    }
}

impl WorldParams {
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("radius".into(), self.radius.to_string()),
            ("speed_min".into(), self.speed_min.to_string()),
            ("speed_max".into(), self.speed_max.to_string()),
            ("circle_speed".into(), self.circle_speed.to_string()),
            ("substeps".into(), self.substeps.to_string()),
            ("render_radius".into(), self.render_radius.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse()
                .map_err(|_| invalid(format!("bad value `{value}` for `{key}`")))
        };
        match key {
            "radius" => self.radius = num()?,
            "speed_min" => self.speed_min = num()?,
            "speed_max" => self.speed_max = num()?,
            "circle_speed" => self.circle_speed = num()?,
            "render_radius" => self.render_radius = num()?,
            "substeps" => {
                self.substeps = value
                    .parse()
                    .map_err(|_| invalid(format!("bad value `{value}` for `substeps`")))?
            }
            _ => return Err(invalid(format!("unknown world parameter `{key}`"))),
        }
        Ok(())
    }

    pub fn simulator(&self) -> Simulator {
        Simulator::new(self.substeps)
    }
}

/// Uniformly sampled observation sequence, `dt = 1` between rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub obs_dim: usize,
    /// `len * obs_dim` values, row-major by time.
    pub observations: Vec<f64>,
    /// Optional `len * STATE_DIM` ground-truth billiards states.
    pub states: Option<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len() / self.obs_dim
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn obs(&self, t: usize) -> &[f64] {
        &self.observations[t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn state(&self, t: usize) -> Option<&[f64]> {
        self.states
            .as_ref()
            .map(|s| &s[t * STATE_DIM..(t + 1) * STATE_DIM])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskId,
    pub params: WorldParams,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Observations per trajectory (`T + 1`).
    pub fn steps(&self) -> usize {
        self.trajectories.first().map_or(0, Trajectory::len)
    }

    pub fn obs_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.obs_dim)
    }
}

/// Independent RNG stream for trajectory `index` under `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(invalid("need at least one trajectory"));
    }
    Ok(())
}

/// `x_t = t`, `y_t = c` with `c ~ U(0, 1)`.
pub fn lines_trajectory(c: f64, horizon: usize) -> Trajectory {
    let observations = (0..=horizon).flat_map(|t| [t as f64, c]).collect();
    Trajectory {
        obs_dim: 2,
        observations,
        states: None,
    }
}

pub fn gen_lines(n: usize, horizon: usize, seed: u64) -> Result<Vec<Trajectory>> {
    check_n(n)?;
    Ok((0..n)
        .map(|i| lines_trajectory(trajectory_rng(seed, i).gen_range(0.0..1.0), horizon))
        .collect())
}

/// Point on a circle of radius `r` moving with tangential speed `speed`.
pub fn circle_trajectory(r: f64, theta0: f64, speed: f64, horizon: usize) -> Trajectory {
    let omega = speed / r;
    let observations = (0..=horizon)
        .flat_map(|t| {
            let th = theta0 + omega * t as f64;
            [r * th.cos(), r * th.sin()]
        })
        .collect();
    Trajectory {
        obs_dim: 2,
        observations,
        states: None,
    }
}

pub fn gen_circles(n: usize, horizon: usize, seed: u64, params: &WorldParams) -> Result<Vec<Trajectory>> {
    check_n(n)?;
    Ok((0..n)
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let theta0 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = rng.gen_range(1.0..2.0);
            circle_trajectory(r, theta0, params.circle_speed, horizon)
        })
        .collect())
}

/// Simulates `horizon` unit steps from `initial`, returning every state.
pub fn simulate(initial: &BilliardsState, horizon: usize, sim: &Simulator) -> Result<Vec<BilliardsState>> {
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(*initial);
    for _ in 0..horizon {
        let next = sim.step(states.last().expect("non-empty"), 1.0)?;
        states.push(next);
    }
    Ok(states)
}

pub fn billiards_trajectory(states: &[BilliardsState], pixels: bool, params: &WorldParams) -> Trajectory {
    let obs_dim = if pixels {
        FRAME_PIXELS
    } else {
        states[0].coordinates().len()
    };
    let observations = states
        .iter()
        .flat_map(|s| {
            if pixels {
                render_pixels(s, params.render_radius)
            } else {
                s.coordinates()
            }
        })
        .collect();
    let flat = states.iter().flat_map(|s| s.flat()).collect();
    Trajectory {
        obs_dim,
        observations,
        states: Some(flat),
    }
}

pub fn gen_billiards(
    n: usize,
    horizon: usize,
    dims: usize,
    pixels: bool,
    seed: u64,
    params: &WorldParams,
) -> Result<Vec<Trajectory>> {
    check_n(n)?;
    if !(1..=2).contains(&dims) {
        return Err(invalid(format!("billiards dims must be 1 or 2, got {dims}")));
    }
    let sim = params.simulator();
    (0..n)
        .map(|i| {
            let mut rng = trajectory_rng(seed, i);
            let init = random_state(&mut rng, dims, params.radius, (params.speed_min, params.speed_max));
            let states = simulate(&init, horizon, &sim)?;
            Ok(billiards_trajectory(&states, pixels, params))
        })
        .collect()
}

/// Generates `n` trajectories of `task` with its default horizon.
pub fn generate(task: TaskId, n: usize, seed: u64, params: &WorldParams) -> Result<Dataset> {
    generate_with_horizon(task, n, task.default_horizon(), seed, params)
}

pub fn generate_with_horizon(
    task: TaskId,
    n: usize,
    horizon: usize,
    seed: u64,
    params: &WorldParams,
) -> Result<Dataset> {
    let trajectories = match task {
        TaskId::Lines => gen_lines(n, horizon, seed)?,
        TaskId::Circles => gen_circles(n, horizon, seed, params)?,
        _ => gen_billiards(
            n,
            horizon,
            task.billiards_dims().expect("billiards task"),
            task.is_pixels(),
            seed,
            params,
        )?,
    };
    Ok(Dataset {
        task,
        params: *params,
        seed,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_with_half_height() {
        let t = lines_trajectory(0.5, 20);
        assert_eq!(t.len(), 21);
        for i in 0..=20 {
            assert_eq!(t.obs(i), &[i as f64, 0.5]);
        }
    }

    #[test]
    fn lines_have_x_equal_t() {
        for t in gen_lines(5, 20, 7).unwrap() {
            for i in 0..=20 {
                assert_eq!(t.obs(i)[0], i as f64);
                assert!((0.0..1.0).contains(&t.obs(i)[1]));
            }
        }
    }

    #[test]
    fn circle_start_and_quarter_turn() {
        let t = circle_trajectory(1.0, 0.0, 0.3, 24);
        assert_eq!(t.obs(0), &[1.0, 0.0]);
        // speed chosen so that a quarter turn takes exactly six steps
        let r = 1.2;
        let q = circle_trajectory(r, 0.0, r * std::f64::consts::FRAC_PI_2 / 6.0, 6);
        assert!(q.obs(6)[0].abs() < 1e-12 && (q.obs(6)[1] - r).abs() < 1e-12);
    }

    #[test]
    fn circle_arc_length_per_step_is_constant() {
        for r in [1.0, 1.3, 1.99] {
            let t = circle_trajectory(r, 0.4, 0.3, 24);
            for i in 0..24 {
                let (a, b) = (t.obs(i), t.obs(i + 1));
                let chord = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
                let arc = 2.0 * r * (chord / (2.0 * r)).asin();
                assert!((arc - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn billiards_rows_and_bounds() {
        let p = WorldParams::default();
        for dims in [1, 2] {
            for t in gen_billiards(20, 44, dims, false, 11, &p).unwrap() {
                assert_eq!(t.len(), 45);
                assert!(t.observations.iter().all(|&x| (0.1 - 1e-12..=0.9 + 1e-12).contains(&x) || x == 0.5));
            }
        }
    }

    #[test]
    fn generation_is_deterministic_per_index() {
        let p = WorldParams::default();
        let a = gen_billiards(6, 44, 2, false, 5, &p).unwrap();
        let b = gen_billiards(6, 44, 2, false, 5, &p).unwrap();
        assert_eq!(a, b);
        // trajectory i only depends on (seed, i)
        let c = gen_billiards(3, 44, 2, false, 5, &p).unwrap();
        assert_eq!(&a[..3], &c[..]);
    }

    #[test]
    fn pixel_frames_have_784_values_in_unit_range() {
        let d = generate(TaskId::PixBill2d, 2, 1, &WorldParams::default()).unwrap();
        assert_eq!(d.obs_dim(), 784);
        assert!(d.trajectories[0].observations.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn task_names_roundtrip() {
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
        }
        assert!("snooker".parse::<TaskId>().is_err());
    }
}
