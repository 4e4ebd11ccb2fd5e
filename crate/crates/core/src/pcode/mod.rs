//! Piecewise-linear latent dynamics with learned step sizes.
//!
//! A latent segment carries an anchor `h`, a velocity `ḣ` and an anchor time
//! `τ`; inside the segment the hidden state is `h + ḣ (t - τ)`. A GRU cell
//! over `[h, ḣ Δt]` produces the next segment and a step-size head predicts
//! how long it should last.

mod model;

pub use model::{dt_from_preactivation, PcOdeConfig, PcOdeModel, SegmentScan};

use crate::error::{invalid, Error, Result};

/// One linear piece of the latent trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSegment {
    pub h_anchor: Vec<f64>,
    pub h_dot: Vec<f64>,
    pub tau: f64,
    pub dt_pred: f64,
}

impl LatentSegment {
    pub fn new(h_anchor: Vec<f64>, h_dot: Vec<f64>, tau: f64, dt_pred: f64) -> Result<Self> {
        if h_anchor.len() != h_dot.len() {
            return Err(Error::ShapeMismatch {
                op: "latent_segment",
                lhs: vec![h_anchor.len()],
                rhs: vec![h_dot.len()],
            });
        }
        Ok(Self {
            h_anchor,
            h_dot,
            tau,
            dt_pred,
        })
    }

    pub fn dim(&self) -> usize {
        self.h_anchor.len()
    }

    /// `h + ḣ (t - τ)`. Times before the anchor are rejected.
    pub fn evaluate_hidden(&self, t: f64) -> Result<Vec<f64>> {
        // written as a negated comparison so NaN is rejected too
        if !(t >= self.tau) {
            return Err(invalid(format!(
                "cannot evaluate segment anchored at {} at earlier time {t}",
                self.tau
            )));
        }
        let elapsed = t - self.tau;
        Ok(self
            .h_anchor
            .iter()
            .zip(&self.h_dot)
            .map(|(h, v)| h + v * elapsed)
            .collect())
    }

    /// The same line anchored at `t`.
    pub fn reanchor(&self, t: f64) -> Result<Self> {
        Ok(Self {
            h_anchor: self.evaluate_hidden(t)?,
            h_dot: self.h_dot.clone(),
            tau: t,
            dt_pred: self.dt_pred - (t - self.tau),
        })
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Per-step loss tolerance below which a segment keeps coasting.
    pub epsilon: f64,
    pub dt_loss_scale: f64,
    pub bootstrap_prob: f64,
    /// Encode the model's own decoded prediction at update times instead of
    /// the ground-truth observation.
    pub feed_decoded: bool,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub decay: f64,
    pub decay_interval: usize,
    /// Ground-truth observations given before autoregressive sampling.
    pub primer_len: usize,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Fit per-feature observation scaling on the training split.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            dt_loss_scale: 1e-5,
            bootstrap_prob: 0.01,
            feed_decoded: false,
            batch_size: 256,
            steps: 10_000,
            lr: 1e-3,
            decay: 0.9,
            decay_interval: 5000,
            primer_len: 5,
            grad_clip: None,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        // zero tolerance is allowed and means "update at every observation"
        if !(self.epsilon >= 0.0) {
            return fail(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if !(0.0..=1.0).contains(&self.bootstrap_prob) {
            return fail(format!("bootstrap_prob {} outside [0, 1]", self.bootstrap_prob));
        }
        if !(self.dt_loss_scale >= 0.0) || !self.dt_loss_scale.is_finite() {
            return fail(format!("bad dt_loss_scale {}", self.dt_loss_scale));
        }
        if self.batch_size == 0 || self.primer_len == 0 || self.decay_interval == 0 {
            return fail("batch_size, primer_len and decay_interval must be positive".into());
        }
        if !(self.lr > 0.0) || !(self.decay > 0.0) {
            return fail("lr and decay must be positive".into());
        }
        Ok(())
    }
}

/// Tolerance taken from a finished baseline RNN run's final training loss.
pub fn select_epsilon(baseline_final_train_loss: Option<f64>) -> Result<f64> {
    match baseline_final_train_loss {
        None => Err(Error::Config(
            "no baseline RNN run available to set the tolerance".into(),
        )),
        Some(l) if l.is_finite() && l >= 0.0 => Ok(l),
        Some(l) => Err(Error::Config(format!("baseline loss {l} is not a usable tolerance"))),
    }
}
