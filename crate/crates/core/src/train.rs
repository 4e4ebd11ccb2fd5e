//! Minibatch training with Adam, early stopping, and evaluation metrics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::model::{AnyModel, SeqBatch, SequenceModel};
use crate::nn::{AdamState, Standardizer};
use crate::pcode::TrainConfig;
use crate::tensor::Tape;
use crate::worlds::Trajectory;

/// Validation cadence for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopRule {
    pub eval_every: usize,
    /// Evaluations without improvement before training stops.
    pub patience: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            eval_every: 250,
            patience: 10,
        }
    }
}

/// What one optimizer step saw.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub step: usize,
    pub loss: f64,
    pub loss_x: f64,
    pub mean_dt_star: f64,
    pub valid_loss: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Per-step prediction loss on the training batch.
    pub loss_curve: Vec<f64>,
    /// Per-step mean optimal step size on the training batch.
    pub dt_star_curve: Vec<f64>,
    pub valid_curve: Vec<(usize, f64)>,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub steps_run: usize,
    /// Teacher-forced prediction loss over the whole training split with
    /// the kept parameters.
    pub final_train_loss: f64,
}

impl AnyModel {
    /// Tolerance applied when the model decides where to update.
    pub fn epsilon(&self) -> f64 {
        match self {
            AnyModel::PcOde(m) => m.epsilon,
            _ => 0.0,
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            AnyModel::PcOde(m) => &m.standardizer,
            AnyModel::Rnn(m) => m.standardizer(),
            AnyModel::OdeRnn(m) => m.standardizer(),
        }
    }

    pub fn set_standardizer(&mut self, s: Standardizer) {
        match self {
            AnyModel::PcOde(m) => m.standardizer = s,
            AnyModel::Rnn(m) => m.set_standardizer(s),
            AnyModel::OdeRnn(m) => m.set_standardizer(s),
        }
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        if let AnyModel::PcOde(m) = self {
            m.epsilon = epsilon;
        }
    }
}

fn eval_config(model: &AnyModel, cfg: Option<&TrainConfig>) -> TrainConfig {
    let base = cfg.cloned().unwrap_or_default();
    TrainConfig {
        epsilon: model.epsilon(),
        bootstrap_prob: 0.0,
        ..base
    }
}

/// Mean teacher-forced prediction loss over `data`, in chunks of `chunk`.
pub fn teacher_forced_loss(model: &AnyModel, data: &[Trajectory], chunk: usize) -> Result<f64> {
    Ok(teacher_forced_stats(model, data, chunk)?.0)
}

/// Mean prediction loss and mean optimal step over `data`.
fn teacher_forced_stats(model: &AnyModel, data: &[Trajectory], chunk: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(invalid("no sequences to evaluate"));
    }
    let cfg = eval_config(model, None);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut total, mut dt_total, mut dt_count) = (0.0, 0.0, 0usize);
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&Trajectory> = part.iter().collect();
        let batch = SeqBatch::from_trajectories(&refs)?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.teacher_forced(&mut tape, &bound, &batch, &cfg, &mut rng)?;
        total += out.loss_x * part.len() as f64;
        for d in out.dt_star.iter().flatten() {
            dt_total += *d as f64;
            dt_count += 1;
        }
    }
    Ok((total / data.len() as f64, dt_total / dt_count.max(1) as f64))
}

/// Trains `model` in place and restores the best validation parameters.
pub fn train(
    model: &mut AnyModel,
    train_set: &[Trajectory],
    valid_set: &[Trajectory],
    cfg: &TrainConfig,
    stop: Option<StopRule>,
    seed: u64,
    progress: &mut dyn FnMut(&StepInfo),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(invalid("empty training set"));
    }
    model.set_epsilon(cfg.epsilon);
    if cfg.standardize {
        let dim = model.obs_dim();
        let rows = train_set
            .iter()
            .flat_map(|t| t.observations.chunks_exact(t.obs_dim));
        model.set_standardizer(Standardizer::fit(dim, rows)?);
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pass_rng = ChaCha8Rng::seed_from_u64(seed);
    pass_rng.set_stream(1);

    let mut adam = AdamState::new(model.params(), cfg.lr, cfg.decay, cfg.decay_interval);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut since_best = 0;
    let eval_chunk = cfg.batch_size.max(64);

    for step in 1..=cfg.steps {
        let mut items = Vec::with_capacity(cfg.batch_size);
        while items.len() < cfg.batch_size.min(train_set.len()) {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            items.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let batch = SeqBatch::from_trajectories(&items)?;
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let out = model.teacher_forced(&mut tape, &bound, &batch, cfg, &mut pass_rng)?;
        let loss = tape.value(out.loss).item();
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grads = tape.backward(out.loss)?;
        drop(tape);
        let params = model.params_mut();
        params.zero_grad();
        params.accumulate(&grads, &bound)?;
        if let Some(c) = cfg.grad_clip {
            params.clip_grad_norm(c);
        }
        adam.step(params)?;

        report.loss_curve.push(out.loss_x);
        report.dt_star_curve.push(out.mean_dt_star());
        report.steps_run = step;

        let mut valid_loss = None;
        if let Some(rule) = stop.filter(|_| !valid_set.is_empty()) {
            if step % rule.eval_every == 0 || step == cfg.steps {
                let v = teacher_forced_loss(model, valid_set, eval_chunk)?;
                if !v.is_finite() {
                    return Err(Error::Diverged { step, loss: v });
                }
                report.valid_curve.push((step, v));
                valid_loss = Some(v);
                if best.as_ref().map_or(true, |(b, _)| v < *b) {
                    best = Some((v, model.params().flatten()));
                    report.best_step = step;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
            }
        }
        progress(&StepInfo {
            step,
            loss,
            loss_x: out.loss_x,
            mean_dt_star: out.mean_dt_star(),
            valid_loss,
        });
        if stop.is_some_and(|r| since_best >= r.patience) {
            break;
        }
    }

    match best {
        Some((_, values)) => model.params_mut().assign_flat(&values)?,
        None => report.best_step = report.steps_run,
    }
    model.params_mut().zero_grad();
    report.final_train_loss = teacher_forced_loss(model, train_set, eval_chunk)?;
    Ok(report)
}

/// Held-out metrics shared by every model kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    /// Teacher-forced next-step loss.
    pub test_mse: f64,
    /// Autoregressive loss over the steps after the primer.
    pub sample_mse: f64,
    /// Mean executed segment duration during sampling.
    pub mean_dt: f64,
    /// Mean optimal step under teacher forcing.
    pub mean_dt_star: f64,
    pub cell_updates_per_seq: f64,
    pub function_evals_per_seq: f64,
}

/// Computes [`EvalMetrics`] over `data` with a primer of `primer_len`.
pub fn evaluate(
    model: &AnyModel,
    data: &[Trajectory],
    primer_len: usize,
    chunk: usize,
) -> Result<EvalMetrics> {
    let (test_mse, mean_dt_star) = teacher_forced_stats(model, data, chunk)?;
    let horizon = data[0].len() - 1;
    if primer_len == 0 || primer_len > horizon {
        return Err(invalid(format!(
            "primer length {primer_len} must be in 1..={horizon}"
        )));
    }
    let dim = model.obs_dim();
    let (mut sq, mut count) = (0.0, 0usize);
    let (mut duration, mut segments, mut evals) = (0.0, 0usize, 0usize);
    for part in data.chunks(chunk.max(1)) {
        let refs: Vec<&Trajectory> = part.iter().collect();
        let primer = SeqBatch::from_trajectories(&refs)?.prefix(primer_len)?;
        let roll = model.rollout(&primer, horizon)?;
        for (b, traj) in part.iter().enumerate() {
            for t in primer_len..=horizon {
                for (p, y) in roll.prediction(b, t).iter().zip(traj.obs(t)) {
                    sq += (p - y) * (p - y);
                }
                count += dim;
            }
            duration += roll.segments[b].iter().map(|s| s.duration).sum::<f64>();
            segments += roll.segments[b].len();
            evals += roll.function_evals[b];
        }
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        test_mse,
        sample_mse: sq / count as f64,
        mean_dt: duration / segments.max(1) as f64,
        mean_dt_star,
        cell_updates_per_seq: segments as f64 / n,
        function_evals_per_seq: evals as f64 / n,
    })
}
