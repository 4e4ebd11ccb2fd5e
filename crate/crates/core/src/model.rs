//! Interface shared by the PC-ODE model and the baselines.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;

use crate::baselines::{OdeRnnModel, RnnModel};
use crate::error::{invalid, Error, Result};
use crate::nn::{Bound, ParamSet};
use crate::pcode::{PcOdeModel, TrainConfig};
use crate::tensor::{Tape, Tensor, Var};
use crate::worlds::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    PcOde,
    Rnn,
    OdeRnn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::PcOde => "pcode",
            ModelKind::Rnn => "rnn",
            ModelKind::OdeRnn => "odernn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcode" | "pc-ode" => Ok(ModelKind::PcOde),
            "rnn" => Ok(ModelKind::Rnn),
            "odernn" | "ode-rnn" => Ok(ModelKind::OdeRnn),
            _ => Err(invalid(format!("unknown model kind `{s}`"))),
        }
    }
}

/// Equal-length sequences laid out as one `[batch, obs_dim]` matrix per time.
#[derive(Debug, Clone)]
pub struct SeqBatch {
    frames: Vec<Tensor>,
}

impl SeqBatch {
    pub fn from_trajectories(items: &[&Trajectory]) -> Result<Self> {
        let first = items.first().ok_or_else(|| invalid("empty batch"))?;
        let (len, dim) = (first.len(), first.obs_dim);
        if items.iter().any(|t| t.len() != len || t.obs_dim != dim) {
            return Err(invalid("ragged batch: sequences differ in length or width"));
        }
        Self::from_fn(items.len(), len, dim, |b, t| items[b].obs(t))
    }

    /// Builds from per-item observation rows.
    pub fn from_fn<'a>(
        batch: usize,
        len: usize,
        dim: usize,
        obs: impl Fn(usize, usize) -> &'a [f64],
    ) -> Result<Self> {
        if len == 0 {
            return Err(invalid("sequences must have at least one observation"));
        }
        let frames = (0..len)
            .map(|t| {
                let mut data = Vec::with_capacity(batch * dim);
                for b in 0..batch {
                    data.extend_from_slice(obs(b, t));
                }
                Tensor::new(&[batch, dim], data)
            })
            .collect::<Result<_>>()?;
        Ok(Self { frames })
    }

    pub fn batch_size(&self) -> usize {
        self.frames[0].shape()[0]
    }

    /// Observations per sequence (`T + 1`).
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.frames[0].shape()[1]
    }

    pub fn frame(&self, t: usize) -> &Tensor {
        &self.frames[t]
    }

    /// Rows `rows` of the frame at time `t`.
    pub fn frame_rows(&self, t: usize, rows: &[usize]) -> Tensor {
        let f = &self.frames[t];
        let data = rows.iter().flat_map(|&r| f.row(r).iter().copied()).collect();
        Tensor::new(&[rows.len(), f.shape()[1]], data).expect("rows are non-empty")
    }

    /// The first `len` observations of every sequence.
    pub fn prefix(&self, len: usize) -> Result<Self> {
        if len == 0 || len > self.len() {
            return Err(invalid(format!("prefix length {len} out of range")));
        }
        Ok(Self {
            frames: self.frames[..len].to_vec(),
        })
    }
}

/// Result of one teacher-forced pass over a batch.
#[derive(Debug, Clone)]
pub struct PassOutput {
    /// Differentiable training objective `L_x + λ L_Δt`.
    pub loss: Var,
    /// Mean per-step prediction loss over items and steps `1..=T`.
    pub loss_x: f64,
    /// Mean squared step-size error per executed segment.
    pub loss_dt: f64,
    /// Per-item sum of prediction losses over `t = 1..=T`.
    pub item_loss: Vec<f64>,
    /// Per-item optimal step sizes of every executed segment.
    pub dt_star: Vec<Vec<usize>>,
    pub cell_updates: usize,
}

impl PassOutput {
    pub fn mean_dt_star(&self) -> f64 {
        let (sum, count) = self
            .dt_star
            .iter()
            .flatten()
            .fold((0usize, 0usize), |(s, c), &d| (s + d, c + 1));
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }
}

/// One executed latent segment of a rollout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRecord {
    pub tau: f64,
    pub dt_pred: f64,
    /// Time until the next cell update, or until the horizon for the last.
    pub duration: f64,
}

/// Predictions at integer times `0..=horizon` for each item. Entries before
/// the primer length repeat the primer observations.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub horizon: usize,
    pub obs_dim: usize,
    pub predictions: Vec<Vec<f64>>,
    pub segments: Vec<Vec<SegmentRecord>>,
    pub function_evals: Vec<usize>,
}

impl Rollout {
    pub fn prediction(&self, item: usize, t: usize) -> &[f64] {
        &self.predictions[item][t * self.obs_dim..(t + 1) * self.obs_dim]
    }

    pub fn cell_updates(&self, item: usize) -> usize {
        self.segments[item].len()
    }

    pub fn total_cell_updates(&self) -> usize {
        self.segments.iter().map(Vec::len).sum()
    }

    /// Mean executed segment duration, pooled over items.
    pub fn mean_dt(&self) -> f64 {
        let total: f64 = self.segments.iter().flatten().map(|s| s.duration).sum();
        total / self.total_cell_updates().max(1) as f64
    }

    pub(crate) fn finish_durations(segments: &mut [SegmentRecord], horizon: usize) {
        for i in 0..segments.len() {
            let end = segments.get(i + 1).map_or(horizon as f64, |n| n.tau);
            segments[i].duration = end - segments[i].tau;
        }
    }
}

/// Common surface of all sequence models.
pub trait SequenceModel {
    fn kind(&self) -> ModelKind;

    fn obs_dim(&self) -> usize;

    fn params(&self) -> &ParamSet;

    fn params_mut(&mut self) -> &mut ParamSet;

    /// Teacher-forced pass recording the training objective on `tape`.
    fn teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &SeqBatch,
        cfg: &TrainConfig,
        rng: &mut dyn RngCore,
    ) -> Result<PassOutput>;

    /// Consumes `primer` with ground-truth inputs, then predicts
    /// autoregressively until `horizon`.
    fn rollout(&self, primer: &SeqBatch, horizon: usize) -> Result<Rollout>;
}

/// Any of the three model families.
#[derive(Debug, Clone)]
pub enum AnyModel {
    PcOde(PcOdeModel),
    Rnn(RnnModel),
    OdeRnn(OdeRnnModel),
}

impl AnyModel {
    fn inner(&self) -> &dyn SequenceModel {
        match self {
            AnyModel::PcOde(m) => m,
            AnyModel::Rnn(m) => m,
            AnyModel::OdeRnn(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SequenceModel {
        match self {
            AnyModel::PcOde(m) => m,
            AnyModel::Rnn(m) => m,
            AnyModel::OdeRnn(m) => m,
        }
    }
}

impl SequenceModel for AnyModel {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn obs_dim(&self) -> usize {
        self.inner().obs_dim()
    }

    fn params(&self) -> &ParamSet {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        self.inner_mut().params_mut()
    }

    fn teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &SeqBatch,
        cfg: &TrainConfig,
        rng: &mut dyn RngCore,
    ) -> Result<PassOutput> {
        self.inner().teacher_forced(tape, bound, batch, cfg, rng)
    }

    fn rollout(&self, primer: &SeqBatch, horizon: usize) -> Result<Rollout> {
        self.inner().rollout(primer, horizon)
    }
}

pub(crate) fn check_rollout_args(model_dim: usize, primer: &SeqBatch, horizon: usize) -> Result<()> {
    if primer.obs_dim() != model_dim {
        return Err(Error::ShapeMismatch {
            op: "rollout",
            lhs: vec![model_dim],
            rhs: vec![primer.obs_dim()],
        });
    }
    if horizon + 1 < primer.len() {
        return Err(invalid(format!(
            "horizon {horizon} is shorter than the primer ({} observations)",
            primer.len()
        )));
    }
    Ok(())
}

pub(crate) fn check_batch_dim(model_dim: usize, batch: &SeqBatch) -> Result<()> {
    if batch.obs_dim() != model_dim {
        return Err(Error::ShapeMismatch {
            op: "teacher_forced",
            lhs: vec![model_dim],
            rhs: vec![batch.obs_dim()],
        });
    }
    if batch.len() < 2 {
        return Err(invalid("teacher forcing needs at least two observations"));
    }
    Ok(())
}

/// Sums per-step `[B]` loss vectors into the mean over items and steps.
pub(crate) fn mean_of_rows(tape: &mut Tape, per_step: &[Var], batch: usize) -> Result<Var> {
    let mut total: Option<Var> = None;
    for &l in per_step {
        let s = tape.sum(l);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    let total = total.ok_or_else(|| invalid("no loss terms"))?;
    Ok(tape.scale(total, 1.0 / (batch * per_step.len()) as f64))
}
