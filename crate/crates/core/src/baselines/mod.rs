//! Fixed-step recurrent baselines: a GRU updated at every observation, and
//! the same GRU with a learned latent ODE integrated between observations.

use rand::{Rng, RngCore};

use crate::error::{invalid, Result};
use crate::model::{
    check_batch_dim, check_rollout_args, mean_of_rows, ModelKind, PassOutput, Rollout,
    SegmentRecord, SeqBatch, SequenceModel,
};
use crate::nn::{Bound, GruCell, ParamSet, ResidualMlp, Standardizer};
use crate::pcode::TrainConfig;
use crate::tensor::{Tape, Tensor, Var};

/// Default RK4 substeps per unit interval.
pub const DEFAULT_SUBSTEPS: usize = 2;

/// Architecture sizes shared by both baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecurrentConfig {
    pub obs_dim: usize,
    pub latent: usize,
    pub hidden: usize,
}

impl RecurrentConfig {
    pub fn new(obs_dim: usize, latent: usize) -> Self {
        Self {
            obs_dim,
            latent,
            hidden: latent,
        }
    }
}

/// Classical fourth-order Runge-Kutta over `substeps` equal substeps.
pub fn ode_integrate(
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
    h0: &[f64],
    span: f64,
    substeps: usize,
) -> Result<Vec<f64>> {
    check_solver(span, substeps)?;
    let w = span / substeps as f64;
    let axpy = |h: &[f64], a: f64, k: &[f64]| -> Vec<f64> {
        h.iter().zip(k).map(|(x, y)| x + y * a).collect()
    };
    let mut h = h0.to_vec();
    for _ in 0..substeps {
        let k1 = f(&h);
        let k2 = f(&axpy(&h, w / 2.0, &k1));
        let k3 = f(&axpy(&h, w / 2.0, &k2));
        let k4 = f(&axpy(&h, w, &k3));
        let sum: Vec<f64> = (0..h.len())
            .map(|i| k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            .collect();
        h = axpy(&h, w / 6.0, &sum);
    }
    Ok(h)
}

fn check_solver(span: f64, substeps: usize) -> Result<()> {
    if !(span > 0.0) {
        return Err(invalid(format!("integration span must be positive, got {span}")));
    }
    if substeps == 0 {
        return Err(invalid("at least one substep is required"));
    }
    Ok(())
}

/// RK4 recorded on a tape; `f` maps a `[rows, d]` state to its derivative.
pub fn ode_integrate_on(
    tape: &mut Tape,
    h0: Var,
    span: f64,
    substeps: usize,
    mut f: impl FnMut(&mut Tape, Var) -> Result<Var>,
) -> Result<Var> {
    check_solver(span, substeps)?;
    let w = span / substeps as f64;
    let mut h = h0;
    for _ in 0..substeps {
        let k1 = f(tape, h)?;
        let s = tape.scale(k1, w / 2.0);
        let p = tape.add(h, s)?;
        let k2 = f(tape, p)?;
        let s = tape.scale(k2, w / 2.0);
        let p = tape.add(h, s)?;
        let k3 = f(tape, p)?;
        let s = tape.scale(k3, w);
        let p = tape.add(h, s)?;
        let k4 = f(tape, p)?;
        let k2x = tape.scale(k2, 2.0);
        let k3x = tape.scale(k3, 2.0);
        let sum = tape.add(k1, k2x)?;
        let sum = tape.add(sum, k3x)?;
        let sum = tape.add(sum, k4)?;
        let s = tape.scale(sum, w / 6.0);
        h = tape.add(h, s)?;
    }
    Ok(h)
}

/// Encoder, GRU and decoder, plus an optional latent dynamics net.
#[derive(Debug, Clone)]
struct Recurrent {
    config: RecurrentConfig,
    standardizer: Standardizer,
    params: ParamSet,
    encoder: ResidualMlp,
    core: GruCell,
    decoder: ResidualMlp,
    dynamics: Option<(ResidualMlp, usize)>,
}

impl Recurrent {
    fn new(config: RecurrentConfig, substeps: Option<usize>, rng: &mut impl Rng) -> Result<Self> {
        if config.obs_dim == 0 || config.latent == 0 || config.hidden == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        let d = config.latent;
        let mut params = ParamSet::new();
        let encoder = ResidualMlp::new(&mut params, "encoder", config.obs_dim, config.hidden, d, rng)?;
        let core = GruCell::new(&mut params, "core", d, d, rng)?;
        let decoder = ResidualMlp::new(&mut params, "decoder", d, config.hidden, config.obs_dim, rng)?;
        // built last so the shared parts draw the same initial values as the plain RNN
        let dynamics = match substeps {
            Some(0) => return Err(invalid("at least one substep is required")),
            Some(n) => Some((
                ResidualMlp::new(&mut params, "dynamics", d, config.hidden, d, rng)?,
                n,
            )),
            None => None,
        };
        Ok(Self {
            config,
            standardizer: Standardizer::identity(config.obs_dim),
            params,
            encoder,
            core,
            decoder,
            dynamics,
        })
    }

    fn evals_per_step(&self) -> usize {
        self.dynamics.as_ref().map_or(0, |(_, n)| 4 * n)
    }

    /// Latent state after absorbing `x` and flowing to the next observation.
    fn absorb(&self, tape: &mut Tape, bound: &Bound, h: Var, x: Var) -> Result<Var> {
        let x = self.standardizer.normalize_on(tape, x)?;
        let z = self.encoder.forward(tape, bound, x)?;
        let h = self.core.step(tape, bound, h, z)?;
        match &self.dynamics {
            Some((net, substeps)) => {
                ode_integrate_on(tape, h, 1.0, *substeps, |tape, s| net.forward(tape, bound, s))
            }
            None => Ok(h),
        }
    }

    fn decode(&self, tape: &mut Tape, bound: &Bound, h: Var) -> Result<Var> {
        let y = self.decoder.forward(tape, bound, h)?;
        self.standardizer.denormalize_on(tape, y)
    }

    fn pass(&self, tape: &mut Tape, bound: &Bound, batch: &SeqBatch) -> Result<PassOutput> {
        check_batch_dim(self.config.obs_dim, batch)?;
        let b_size = batch.batch_size();
        let horizon = batch.len() - 1;
        let mut h = tape.constant(Tensor::zeros(&[b_size, self.config.latent])?);
        let mut item_loss = vec![0.0; b_size];
        let mut step_losses = Vec::with_capacity(horizon);
        for t in 0..horizon {
            let x = tape.constant(batch.frame(t).clone());
            h = self.absorb(tape, bound, h, x)?;
            let xhat = self.decode(tape, bound, h)?;
            let truth = tape.constant(batch.frame(t + 1).clone());
            let ell = tape.mse_rows(xhat, truth)?;
            for (acc, l) in item_loss.iter_mut().zip(tape.value(ell).data()) {
                *acc += l;
            }
            step_losses.push(ell);
        }
        let loss = mean_of_rows(tape, &step_losses, b_size)?;
        Ok(PassOutput {
            loss,
            loss_x: tape.value(loss).item(),
            loss_dt: 0.0,
            item_loss,
            dt_star: vec![vec![1; horizon]; b_size],
            cell_updates: b_size * horizon,
        })
    }

    fn rollout(&self, primer: &SeqBatch, horizon: usize) -> Result<Rollout> {
        check_rollout_args(self.config.obs_dim, primer, horizon)?;
        let (b_size, dim, p_len) = (primer.batch_size(), self.config.obs_dim, primer.len());
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let tape = &mut tape;
        let mut predictions: Vec<Vec<f64>> = (0..b_size)
            .map(|b| {
                let mut p = Vec::with_capacity((horizon + 1) * dim);
                for t in 0..p_len {
                    p.extend_from_slice(primer.frame(t).row(b));
                }
                p
            })
            .collect();
        let mut h = tape.constant(Tensor::zeros(&[b_size, self.config.latent])?);
        let mut updates = 0;
        for t in 0..p_len.min(horizon) {
            let x = tape.constant(primer.frame(t).clone());
            h = self.absorb(tape, &bound, h, x)?;
            updates += 1;
        }
        for t in p_len..=horizon {
            let xhat = self.decode(tape, &bound, h)?;
            for (b, row) in tape.value(xhat).rows().enumerate() {
                predictions[b].extend_from_slice(row);
            }
            if t < horizon {
                h = self.absorb(tape, &bound, h, xhat)?;
                updates += 1;
            }
        }
        let segments: Vec<SegmentRecord> = (0..updates)
            .map(|t| SegmentRecord {
                tau: t as f64,
                dt_pred: 1.0,
                duration: 1.0,
            })
            .collect();
        Ok(Rollout {
            horizon,
            obs_dim: dim,
            predictions,
            segments: vec![segments; b_size],
            function_evals: vec![updates * self.evals_per_step(); b_size],
        })
    }
}

/// GRU updated at every observation with a fixed unit step.
#[derive(Debug, Clone)]
pub struct RnnModel(Recurrent);

impl RnnModel {
    pub fn standardizer(&self) -> &Standardizer {
        &self.0.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) {
        self.0.standardizer = s;
    }

    pub fn new(config: RecurrentConfig, rng: &mut impl Rng) -> Result<Self> {
        Recurrent::new(config, None, rng).map(Self)
    }

    pub fn config(&self) -> RecurrentConfig {
        self.0.config
    }
}

/// GRU whose state follows a learned autonomous ODE between observations.
#[derive(Debug, Clone)]
pub struct OdeRnnModel(Recurrent);

impl OdeRnnModel {
    pub fn standardizer(&self) -> &Standardizer {
        &self.0.standardizer
    }

    pub fn set_standardizer(&mut self, s: Standardizer) {
        self.0.standardizer = s;
    }

    pub fn new(config: RecurrentConfig, substeps: usize, rng: &mut impl Rng) -> Result<Self> {
        Recurrent::new(config, Some(substeps), rng).map(Self)
    }

    pub fn config(&self) -> RecurrentConfig {
        self.0.config
    }

    pub fn substeps(&self) -> usize {
        self.0.dynamics.as_ref().map_or(0, |(_, n)| *n)
    }

    /// Names of the dynamics-net parameters.
    pub fn dynamics_param_names(&self) -> Vec<String> {
        self.0
            .params
            .iter()
            .map(|(n, _)| n)
            .filter(|n| n.starts_with("dynamics."))
            .map(str::to_string)
            .collect()
    }
}

macro_rules! recurrent_model {
    ($ty:ty, $kind:expr) => {
        impl SequenceModel for $ty {
            fn kind(&self) -> ModelKind {
                $kind
            }

            fn obs_dim(&self) -> usize {
                self.0.config.obs_dim
            }

            fn params(&self) -> &ParamSet {
                &self.0.params
            }

            fn params_mut(&mut self) -> &mut ParamSet {
                &mut self.0.params
            }

            fn teacher_forced(
                &self,
                tape: &mut Tape,
                bound: &Bound,
                batch: &SeqBatch,
                _cfg: &TrainConfig,
                _rng: &mut dyn RngCore,
            ) -> Result<PassOutput> {
                self.0.pass(tape, bound, batch)
            }

            fn rollout(&self, primer: &SeqBatch, horizon: usize) -> Result<Rollout> {
                self.0.rollout(primer, horizon)
            }
        }
    };
}

recurrent_model!(RnnModel, ModelKind::Rnn);
recurrent_model!(OdeRnnModel, ModelKind::OdeRnn);
