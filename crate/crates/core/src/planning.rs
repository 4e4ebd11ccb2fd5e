//! Random-shooting planner for a one-pocket, two-ball billiards shot.
//!
//! The cue ball (ball 0) and the target ball (ball 1) start at rest. A shot
//! is an initial cue velocity; it succeeds when the target comes within
//! [`SUCCESS_RADIUS`] of the pocket at `(1, 0)` during [`SHOT_HORIZON`]
//! steps of the exact simulator. Learned models score candidates from a
//! two-frame simulated primer and then roll out on their own.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{AnyModel, SeqBatch, SequenceModel};
use crate::worlds::{simulate, Ball, BilliardsState, Simulator};

pub const POCKET: [f64; 2] = [1.0, 0.0];
pub const SUCCESS_RADIUS: f64 = 0.17;
pub const SHOT_HORIZON: usize = 35;
/// Simulated frames handed to a learned model before it rolls out alone.
pub const MODEL_PRIMER: usize = 2;

/// Initial table layout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotProblem {
    pub cue: [f64; 2],
    pub target: [f64; 2],
    pub radius: f64,
}

impl ShotProblem {
    pub fn new(cue: [f64; 2], target: [f64; 2], radius: f64) -> Result<Self> {
        let p = Self { cue, target, radius };
        p.state([0.0, 0.0]).validate()?;
        Ok(p)
    }

    /// Uniform non-overlapping positions.
    pub fn random(rng: &mut impl Rng, radius: f64) -> Self {
        loop {
            let mut pick = || [rng.gen_range(radius..1.0 - radius), rng.gen_range(radius..1.0 - radius)];
            let (cue, target) = (pick(), pick());
            if let Ok(p) = Self::new(cue, target, radius) {
                if p.state([0.0; 2]).center_distance() > 2.0 * radius + 1e-6 {
                    return p;
                }
            }
        }
    }

    /// Table state right after the cue ball is struck with `action`.
    pub fn state(&self, action: [f64; 2]) -> BilliardsState {
        BilliardsState {
            balls: [
                Ball { pos: self.cue, vel: action },
                Ball { pos: self.target, vel: [0.0, 0.0] },
            ],
            radius: self.radius,
            dims: 2,
        }
    }
}

/// Cue-velocity sampling and evaluation budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Candidate counts at which success is recorded.
    pub budgets: Vec<usize>,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            speed_min: 0.05,
            speed_max: 0.2,
            budgets: vec![1, 5, 10, 20],
        }
    }
}

/// `k` cue velocities with uniform direction and speed in `speed`.
pub fn propose_actions(k: usize, speed: (f64, f64), rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
    if k == 0 {
        return Err(invalid("need at least one candidate action"));
    }
    if !(speed.0 > 0.0 && speed.0 < speed.1) {
        return Err(invalid(format!("bad speed band {speed:?}")));
    }
    Ok((0..k)
        .map(|_| {
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let s = rng.gen_range(speed.0..speed.1);
            [s * angle.cos(), s * angle.sin()]
        })
        .collect())
}

pub fn pocket_distance(p: [f64; 2]) -> f64 {
    ((p[0] - POCKET[0]).powi(2) + (p[1] - POCKET[1]).powi(2)).sqrt()
}

pub fn min_pocket_distance(points: impl IntoIterator<Item = [f64; 2]>) -> f64 {
    points.into_iter().map(pocket_distance).fold(f64::INFINITY, f64::min)
}

pub fn is_success(min_distance: f64) -> bool {
    min_distance < SUCCESS_RADIUS
}

/// Minimum target-to-pocket distance when the shot is played for real.
pub fn execute(problem: &ShotProblem, action: [f64; 2], sim: &Simulator) -> Result<f64> {
    let states = simulate(&problem.state(action), SHOT_HORIZON, sim)?;
    Ok(min_pocket_distance(states.iter().map(|s| s.balls[1].pos)))
}

/// How candidate shots are ranked.
#[derive(Debug, Clone, Copy)]
pub enum Planner<'a> {
    /// The exact simulator scores its own shots.
    Simulator,
    Model(&'a AnyModel),
    /// Plays the first candidate without scoring.
    Random,
}

impl Planner<'_> {
    pub fn name(&self) -> String {
        match self {
            Planner::Simulator => "simulator".into(),
            Planner::Model(m) => m.kind().as_str().into(),
            Planner::Random => "random".into(),
        }
    }
}

/// Predicted score of one candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionScore {
    pub min_distance: f64,
    pub cell_updates: usize,
    pub function_evals: usize,
}

/// Scores every candidate. The random planner scores nothing and returns
/// infinite distances.
pub fn score_actions(
    planner: Planner<'_>,
    problem: &ShotProblem,
    actions: &[[f64; 2]],
    sim: &Simulator,
) -> Result<Vec<ActionScore>> {
    match planner {
        Planner::Random => Ok(vec![
            ActionScore {
                min_distance: f64::INFINITY,
                cell_updates: 0,
                function_evals: 0,
            };
            actions.len()
        ]),
        Planner::Simulator => actions
            .iter()
            .map(|&a| {
                Ok(ActionScore {
                    min_distance: execute(problem, a, sim)?,
                    cell_updates: 0,
                    function_evals: 0,
                })
            })
            .collect(),
        Planner::Model(model) => score_with_model(model, problem, actions, sim),
    }
}

fn score_with_model(
    model: &AnyModel,
    problem: &ShotProblem,
    actions: &[[f64; 2]],
    sim: &Simulator,
) -> Result<Vec<ActionScore>> {
    if model.obs_dim() != 4 {
        return Err(Error::Config(format!(
            "planning needs a model of two-ball 2D coordinates (4 values), got {}",
            model.obs_dim()
        )));
    }
    let primers: Vec<Vec<f64>> = actions
        .iter()
        .map(|&a| {
            let states = simulate(&problem.state(a), MODEL_PRIMER - 1, sim)?;
            Ok(states.iter().flat_map(BilliardsState::coordinates).collect())
        })
        .collect::<Result<_>>()?;
    let primer = SeqBatch::from_fn(actions.len(), MODEL_PRIMER, 4, |b, t| &primers[b][t * 4..(t + 1) * 4])?;
    let roll = model.rollout(&primer, SHOT_HORIZON)?;
    Ok((0..actions.len())
        .map(|b| ActionScore {
            min_distance: min_pocket_distance((0..=SHOT_HORIZON).map(|t| {
                let p = roll.prediction(b, t);
                [p[2], p[3]]
            })),
            cell_updates: roll.cell_updates(b),
            function_evals: roll.function_evals[b],
        })
        .collect())
}

/// Outcome of planning one problem with a given candidate budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeResult {
    pub action: [f64; 2],
    pub predicted_min_distance: f64,
    pub executed_min_distance: f64,
    pub success: bool,
    /// Cell updates spent scoring the candidates.
    pub cell_updates: usize,
    pub function_evals: usize,
    pub candidates: usize,
}

/// Picks the best of the first `budget` scored candidates and plays it.
pub fn choose_and_execute(
    problem: &ShotProblem,
    actions: &[[f64; 2]],
    scores: &[ActionScore],
    budget: usize,
    sim: &Simulator,
) -> Result<EpisodeResult> {
    if budget == 0 || budget > actions.len() || scores.len() != actions.len() {
        return Err(invalid(format!(
            "budget {budget} with {} candidates and {} scores",
            actions.len(),
            scores.len()
        )));
    }
    // ties, including the unscored random planner, go to the earliest candidate
    let best = (1..budget).fold(0, |best, i| {
        if scores[i].min_distance < scores[best].min_distance {
            i
        } else {
            best
        }
    });
    let executed = execute(problem, actions[best], sim)?;
    Ok(EpisodeResult {
        action: actions[best],
        predicted_min_distance: scores[best].min_distance,
        executed_min_distance: executed,
        success: is_success(executed),
        cell_updates: scores[..budget].iter().map(|s| s.cell_updates).sum(),
        function_evals: scores[..budget].iter().map(|s| s.function_evals).sum(),
        candidates: budget,
    })
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub problem: usize,
    pub planner: String,
    pub budget: usize,
    pub success: bool,
    pub cell_updates: usize,
    pub function_evals: usize,
}

/// Problem `index` of the benchmark drawn from `seed`.
pub fn benchmark_problem(seed: u64, index: usize, radius: f64) -> ShotProblem {
    ShotProblem::random(&mut stream(seed, 2 * index as u64), radius)
}

/// Candidate list of problem `index`, shared by every planner.
pub fn benchmark_candidates(seed: u64, index: usize, cfg: &PlanConfig) -> Result<Vec<[f64; 2]>> {
    let k = cfg.budgets.iter().copied().max().unwrap_or(0);
    propose_actions(k, (cfg.speed_min, cfg.speed_max), &mut stream(seed, 2 * index as u64 + 1))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Plans `n_problems` benchmark problems at every budget in `cfg`.
pub fn plan_and_execute(
    planner: Planner<'_>,
    n_problems: usize,
    cfg: &PlanConfig,
    radius: f64,
    seed: u64,
    sim: &Simulator,
) -> Result<Vec<PlanRecord>> {
    if cfg.budgets.is_empty() || cfg.budgets.contains(&0) {
        return Err(Error::Config("budgets must be positive and non-empty".into()));
    }
    let name = planner.name();
    let mut records = Vec::with_capacity(n_problems * cfg.budgets.len());
    for i in 0..n_problems {
        let problem = benchmark_problem(seed, i, radius);
        let actions = benchmark_candidates(seed, i, cfg)?;
        let scores = score_actions(planner, &problem, &actions, sim)?;
        for &budget in &cfg.budgets {
            let ep = choose_and_execute(&problem, &actions, &scores, budget, sim)?;
            records.push(PlanRecord {
                problem: i,
                planner: name.clone(),
                budget,
                success: ep.success,
                cell_updates: ep.cell_updates,
                function_evals: ep.function_evals,
            });
        }
    }
    Ok(records)
}

/// Success rate per budget for `planner`, in budget order.
pub fn success_curve(records: &[PlanRecord], planner: &str) -> Vec<(usize, f64)> {
    let mut budgets: Vec<usize> = records
        .iter()
        .filter(|r| r.planner == planner)
        .map(|r| r.budget)
        .collect();
    budgets.sort_unstable();
    budgets.dedup();
    budgets
        .into_iter()
        .map(|b| {
            let rows: Vec<_> = records
                .iter()
                .filter(|r| r.planner == planner && r.budget == b)
                .collect();
            let wins = rows.iter().filter(|r| r.success).count();
            (b, wins as f64 / rows.len() as f64)
        })
        .collect()
}

/// Total cell updates spent by `planner` at `budget`.
pub fn total_cell_updates(records: &[PlanRecord], planner: &str, budget: usize) -> usize {
    records
        .iter()
        .filter(|r| r.planner == planner && r.budget == budget)
        .map(|r| r.cell_updates)
        .sum()
}

pub fn write_csv(records: &[PlanRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "problem,planner,budget,success,cell_updates,function_evals")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.problem,
            r.planner,
            r.budget,
            u8::from(r.success),
            r.cell_updates,
            r.function_evals
        )?;
    }
    Ok(())
}
