use rand::{Rng, RngCore};

use super::{LatentSegment, TrainConfig};
use crate::error::{invalid, Error, Result};
use crate::model::{
    check_batch_dim, check_rollout_args, mean_of_rows, ModelKind, PassOutput, Rollout,
    SegmentRecord, SeqBatch, SequenceModel,
};
use crate::nn::{Affine, Bound, GruCell, ParamSet, ResidualMlp, Standardizer};
use crate::tensor::{Tape, Tensor, Var};

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PcOdeConfig {
    pub obs_dim: usize,
    /// Width of `h` and of `ḣ`; the recurrent core carries twice this.
    pub latent: usize,
    /// Hidden width of the encoder and decoder.
    pub hidden: usize,
    pub leaky_slope: f64,
}

impl PcOdeConfig {
    pub fn new(obs_dim: usize, latent: usize) -> Self {
        Self {
            obs_dim,
            latent,
            hidden: latent,
            leaky_slope: 0.01,
        }
    }
}

/// `1 + leaky_relu(a)`.
pub fn dt_from_preactivation(a: f64, slope: f64) -> f64 {
    1.0 + if a > 0.0 { a } else { slope * a }
}

/// Losses met while coasting a segment forward, up to and including the
/// first step at or above tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentScan {
    pub losses: Vec<f64>,
    /// Steps after the anchor at which the tolerance first failed.
    pub first_violation: Option<usize>,
}

impl SegmentScan {
    /// Largest step count whose every intermediate loss is under tolerance,
    /// at least 1 and at most the scanned length.
    pub fn optimal_dt(&self, available: usize) -> usize {
        match self.first_violation {
            Some(k) => (k - 1).max(1),
            None => available,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PcOdeModel {
    pub config: PcOdeConfig,
    /// Tolerance used to decide updates while consuming a primer.
    pub epsilon: f64,
    /// Fixed observation scaling around the encoder and decoder.
    pub standardizer: Standardizer,
    params: ParamSet,
    encoder: ResidualMlp,
    core: GruCell,
    dt_head: Affine,
    decoder: ResidualMlp,
}

/// Batched latent state on a tape.
#[derive(Clone, Copy)]
struct Active {
    h: Var,
    h_dot: Var,
    dt: Var,
}

impl PcOdeModel {
    pub fn new(config: PcOdeConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.obs_dim == 0 || config.latent == 0 || config.hidden == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        let d = config.latent;
        let mut params = ParamSet::new();
        let encoder = ResidualMlp::new(&mut params, "encoder", config.obs_dim, config.hidden, d, rng)?;
        let core = GruCell::new(&mut params, "core", d, 2 * d, rng)?;
        let dt_head = Affine::new(&mut params, "dt_head", d, 1, rng)?;
        let decoder = ResidualMlp::new(&mut params, "decoder", d, config.hidden, config.obs_dim, rng)?;
        Ok(Self {
            config,
            epsilon: 0.0,
            standardizer: Standardizer::identity(config.obs_dim),
            params,
            encoder,
            core,
            dt_head,
            decoder,
        })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    pub fn dt_head(&self) -> &Affine {
        &self.dt_head
    }

    pub fn encode_on(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let x = self.standardizer.normalize_on(tape, x)?;
        self.encoder.forward(tape, bound, x)
    }

    pub fn decode_on(&self, tape: &mut Tape, bound: &Bound, h: Var) -> Result<Var> {
        let y = self.decoder.forward(tape, bound, h)?;
        self.standardizer.denormalize_on(tape, y)
    }

    /// Rows of `h + ḣ · elapsed`.
    pub fn hidden_on(tape: &mut Tape, h: Var, h_dot: Var, elapsed: &[f64]) -> Result<Var> {
        let disp = tape.scale_rows(h_dot, elapsed)?;
        tape.add(h, disp)
    }

    /// Cell update after coasting `elapsed` on the segments `(h, ḣ)`.
    /// Returns the new `(h, ḣ, Δt)`.
    pub fn cell_on(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        h: Var,
        h_dot: Var,
        elapsed: &[f64],
        z: Var,
    ) -> Result<(Var, Var, Var)> {
        let d = self.latent();
        let disp = tape.scale_rows(h_dot, elapsed)?;
        let state = tape.concat(&[h, disp])?;
        let next = self.core.step(tape, bound, state, z)?;
        let h_new = tape.slice_cols(next, 0, d)?;
        let h_dot_new = tape.slice_cols(next, d, d)?;
        let pre = self.dt_head.forward(tape, bound, h_new)?;
        let act = tape.leaky_relu(pre, self.config.leaky_slope);
        let dt = tape.add_scalar(act, 1.0);
        Ok((h_new, h_dot_new, dt))
    }

    fn cell_active(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        prev: Active,
        elapsed: &[f64],
        z: Var,
    ) -> Result<Active> {
        let (h, h_dot, dt) = self.cell_on(tape, bound, prev.h, prev.h_dot, elapsed, z)?;
        Ok(Active { h, h_dot, dt })
    }

    /// Replaces rows `rows` of `a` by the rows of `b`.
    fn merge(tape: &mut Tape, a: Active, rows: &[usize], b: Active) -> Result<Active> {
        Ok(Active {
            h: tape.merge_rows(a.h, rows, b.h)?,
            h_dot: tape.merge_rows(a.h_dot, rows, b.h_dot)?,
            dt: tape.merge_rows(a.dt, rows, b.dt)?,
        })
    }

    fn select(tape: &mut Tape, a: Active, rows: &[usize]) -> Result<Active> {
        Ok(Active {
            h: tape.select_rows(a.h, rows)?,
            h_dot: tape.select_rows(a.h_dot, rows)?,
            dt: tape.select_rows(a.dt, rows)?,
        })
    }

    fn zero_active(&self, tape: &mut Tape, batch: usize) -> Result<Active> {
        let zeros = tape.constant(Tensor::zeros(&[batch, self.latent()])?);
        let dt = tape.constant(Tensor::zeros(&[batch, 1])?);
        Ok(Active {
            h: zeros,
            h_dot: zeros,
            dt,
        })
    }

    fn row_tensor(&self, values: &[f64], width: usize, what: &'static str) -> Result<Tensor> {
        if values.len() != width {
            return Err(Error::ShapeMismatch {
                op: what,
                lhs: vec![width],
                rhs: vec![values.len()],
            });
        }
        Tensor::new(&[1, width], values.to_vec())
    }

    /// Encoder output for one observation.
    pub fn encode(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let x = tape.constant(self.row_tensor(obs, self.config.obs_dim, "encode")?);
        let z = self.encode_on(&mut tape, &bound, x)?;
        Ok(tape.value(z).data().to_vec())
    }

    /// Decoder output for one latent vector.
    pub fn decode(&self, h: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let hv = tape.constant(self.row_tensor(h, self.latent(), "decode")?);
        let x = self.decode_on(&mut tape, &bound, hv)?;
        Ok(tape.value(x).data().to_vec())
    }

    /// The all-zero segment that precedes the first observation.
    pub fn zero_segment(&self) -> LatentSegment {
        let d = self.latent();
        LatentSegment {
            h_anchor: vec![0.0; d],
            h_dot: vec![0.0; d],
            tau: 0.0,
            dt_pred: 0.0,
        }
    }

    /// Jumps from `prev` at time `t` using the encoded observation `z`.
    pub fn cell_update(&self, prev: &LatentSegment, z: &[f64], t: f64) -> Result<LatentSegment> {
        let d = self.latent();
        if !(t >= prev.tau) {
            return Err(invalid(format!(
                "update time {t} precedes segment anchor {}",
                prev.tau
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let h = tape.constant(self.row_tensor(&prev.h_anchor, d, "cell_update(h)")?);
        let v = tape.constant(self.row_tensor(&prev.h_dot, d, "cell_update(h_dot)")?);
        let z = tape.constant(self.row_tensor(z, d, "cell_update(z)")?);
        let (h, v, dt) = self.cell_on(&mut tape, &bound, h, v, &[t - prev.tau], z)?;
        LatentSegment::new(
            tape.value(h).data().to_vec(),
            tape.value(v).data().to_vec(),
            t,
            tape.value(dt).item(),
        )
    }

    /// Segment produced by the first observation at time 0.
    pub fn initial_segment(&self, x0: &[f64]) -> Result<LatentSegment> {
        let z = self.encode(x0)?;
        self.cell_update(&self.zero_segment(), &z, 0.0)
    }

    /// Per-step loss of the segment's decoded prediction against `truth` at
    /// time `t`.
    pub fn step_loss(&self, seg: &LatentSegment, t: f64, truth: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let d = self.latent();
        let h = tape.constant(self.row_tensor(&seg.h_anchor, d, "step_loss")?);
        let v = tape.constant(self.row_tensor(&seg.h_dot, d, "step_loss")?);
        if !(t >= seg.tau) {
            return Err(invalid("loss requested before segment anchor"));
        }
        let hid = Self::hidden_on(&mut tape, h, v, &[t - seg.tau])?;
        let xhat = self.decode_on(&mut tape, &bound, hid)?;
        let y = tape.constant(self.row_tensor(truth, self.config.obs_dim, "step_loss(truth)")?);
        let l = tape.mse_rows(xhat, y)?;
        Ok(tape.value(l).data()[0])
    }

    /// Coasts `seg` over `suffix`, where `suffix[j]` is the observation at
    /// `seg.tau + 1 + j`, stopping at the first loss not below `epsilon`.
    pub fn scan_segment(
        &self,
        seg: &LatentSegment,
        suffix: &[&[f64]],
        epsilon: f64,
    ) -> Result<SegmentScan> {
        if suffix.is_empty() {
            return Err(invalid("line search over an empty suffix"));
        }
        let mut losses = Vec::new();
        for (j, obs) in suffix.iter().enumerate() {
            let l = self.step_loss(seg, seg.tau + (j + 1) as f64, obs)?;
            losses.push(l);
            if !(l < epsilon) {
                return Ok(SegmentScan {
                    losses,
                    first_violation: Some(j + 1),
                });
            }
        }
        Ok(SegmentScan {
            losses,
            first_violation: None,
        })
    }

    /// Largest integer step whose intermediate predictions all stay under
    /// `epsilon`; 1 if the first step already fails.
    pub fn optimal_dt_linesearch(
        &self,
        seg: &LatentSegment,
        suffix: &[&[f64]],
        epsilon: f64,
    ) -> Result<usize> {
        Ok(self.scan_segment(seg, suffix, epsilon)?.optimal_dt(suffix.len()))
    }

    /// Masked teacher-forced sweep shared by training and evaluation.
    fn masked_pass(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &SeqBatch,
        cfg: &TrainConfig,
        rng: &mut dyn RngCore,
    ) -> Result<PassOutput> {
        check_batch_dim(self.config.obs_dim, batch)?;
        let b_size = batch.batch_size();
        let horizon = batch.len() - 1;

        let zero = self.zero_active(tape, b_size)?;
        let x0 = tape.constant(batch.frame(0).clone());
        let z0 = self.encode_on(tape, bound, x0)?;
        let mut act = self.cell_active(tape, bound, zero, &vec![0.0; b_size], z0)?;
        let mut cell_updates = b_size;

        let mut tau = vec![0usize; b_size];
        let mut first_fail: Vec<Option<usize>> = vec![None; b_size];
        let mut item_loss = vec![0.0; b_size];
        let mut dt_star: Vec<Vec<usize>> = vec![Vec::new(); b_size];
        let mut step_losses = Vec::with_capacity(horizon);
        let mut dt_terms: Vec<(Var, Vec<f64>)> = Vec::new();

        for t in 1..=horizon {
            let elapsed: Vec<f64> = tau.iter().map(|&s| (t - s) as f64).collect();
            let hid = Self::hidden_on(tape, act.h, act.h_dot, &elapsed)?;
            let xhat = self.decode_on(tape, bound, hid)?;
            let truth = tape.constant(batch.frame(t).clone());
            let ell = tape.mse_rows(xhat, truth)?;
            step_losses.push(ell);

            let mut rows = Vec::new();
            for (b, &l) in tape.value(ell).data().iter().enumerate() {
                item_loss[b] += l;
                if l < cfg.epsilon {
                    continue;
                }
                first_fail[b].get_or_insert(t - tau[b]);
                if t == horizon {
                    continue;
                }
                // occasionally coast one step past the tolerance
                let coasted_once = first_fail[b] != Some(t - tau[b]);
                if cfg.bootstrap_prob > 0.0 && !coasted_once && rng.gen::<f64>() < cfg.bootstrap_prob {
                    continue;
                }
                rows.push(b);
            }
            if rows.is_empty() {
                continue;
            }

            let targets: Vec<f64> = rows
                .iter()
                .map(|&b| {
                    let star = first_fail[b].map_or(t - tau[b], |k| k.saturating_sub(1).max(1));
                    dt_star[b].push(star);
                    star as f64
                })
                .collect();
            let old = Self::select(tape, act, &rows)?;
            dt_terms.push((old.dt, targets));

            let input = if cfg.feed_decoded {
                tape.select_rows(xhat, &rows)?
            } else {
                tape.constant(batch.frame_rows(t, &rows))
            };
            let z = self.encode_on(tape, bound, input)?;
            let sel_elapsed: Vec<f64> = rows.iter().map(|&b| elapsed[b]).collect();
            let fresh = self.cell_active(tape, bound, old, &sel_elapsed, z)?;
            act = Self::merge(tape, act, &rows, fresh)?;
            cell_updates += rows.len();
            for &b in &rows {
                tau[b] = t;
                first_fail[b] = None;
            }
        }

        // close the segments still open at the horizon
        let all: Vec<usize> = (0..b_size).collect();
        let targets: Vec<f64> = all
            .iter()
            .map(|&b| {
                let star = first_fail[b].map_or(horizon - tau[b], |k| k.saturating_sub(1).max(1));
                dt_star[b].push(star);
                star as f64
            })
            .collect();
        dt_terms.push((act.dt, targets));

        let loss_x = mean_of_rows(tape, &step_losses, b_size)?;
        let mut dt_sum: Option<Var> = None;
        let mut segments = 0;
        for (pred, targets) in dt_terms {
            segments += targets.len();
            let target = tape.constant(Tensor::new(&[targets.len(), 1], targets)?);
            let diff = tape.sub(pred, target)?;
            let sq = tape.mul(diff, diff)?;
            let s = tape.sum(sq);
            dt_sum = Some(match dt_sum {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        let dt_sum = dt_sum.expect("at least one segment per item");
        let loss_dt = tape.scale(dt_sum, 1.0 / segments as f64);
        let weighted = tape.scale(loss_dt, cfg.dt_loss_scale);
        let loss = tape.add(loss_x, weighted)?;

        Ok(PassOutput {
            loss,
            loss_x: tape.value(loss_x).item(),
            loss_dt: tape.value(loss_dt).item(),
            item_loss,
            dt_star,
            cell_updates,
        })
    }
}

impl SequenceModel for PcOdeModel {
    fn kind(&self) -> ModelKind {
        ModelKind::PcOde
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    fn params(&self) -> &ParamSet {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn teacher_forced(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        batch: &SeqBatch,
        cfg: &TrainConfig,
        rng: &mut dyn RngCore,
    ) -> Result<PassOutput> {
        self.masked_pass(tape, bound, batch, cfg, rng)
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
        let mut segments: Vec<Vec<SegmentRecord>> = vec![Vec::new(); b_size];
        let mut tau = vec![0.0; b_size];

        let record = |tape: &Tape, segments: &mut Vec<Vec<SegmentRecord>>, act: Active, rows: &[usize], at: &[f64]| {
            let dts = tape.value(act.dt).data();
            for (j, &b) in rows.iter().enumerate() {
                segments[b].push(SegmentRecord {
                    tau: at[j],
                    dt_pred: dts[j],
                    duration: 0.0,
                });
            }
        };

        let zero = self.zero_active(tape, b_size)?;
        let x0 = tape.constant(primer.frame(0).clone());
        let z0 = self.encode_on(tape, &bound, x0)?;
        let mut act = self.cell_active(tape, &bound, zero, &vec![0.0; b_size], z0)?;
        let all: Vec<usize> = (0..b_size).collect();
        record(tape, &mut segments, act, &all, &tau);

        // ground-truth primer, updating where the tolerance fails
        for t in 1..p_len {
            let elapsed: Vec<f64> = tau.iter().map(|&s| t as f64 - s).collect();
            let hid = Self::hidden_on(tape, act.h, act.h_dot, &elapsed)?;
            let xhat = self.decode_on(tape, &bound, hid)?;
            let truth = tape.constant(primer.frame(t).clone());
            let ell = tape.mse_rows(xhat, truth)?;
            let rows: Vec<usize> = tape
                .value(ell)
                .data()
                .iter()
                .enumerate()
                .filter_map(|(b, &l)| (!(l < self.epsilon)).then_some(b))
                .collect();
            if rows.is_empty() {
                continue;
            }
            let old = Self::select(tape, act, &rows)?;
            let input = tape.constant(primer.frame_rows(t, &rows));
            let z = self.encode_on(tape, &bound, input)?;
            let sel: Vec<f64> = rows.iter().map(|&b| elapsed[b]).collect();
            let fresh = self.cell_active(tape, &bound, old, &sel, z)?;
            record(tape, &mut segments, fresh, &rows, &vec![t as f64; rows.len()]);
            act = Self::merge(tape, act, &rows, fresh)?;
            for &b in &rows {
                tau[b] = t as f64;
            }
        }

        let dts = tape.value(act.dt).data().to_vec();
        let mut next: Vec<f64> = (0..b_size)
            .map(|b| (tau[b] + dts[b].max(1.0)).max(p_len as f64))
            .collect();

        // autoregressive phase on decoded predictions
        let advance = |tape: &mut Tape,
                           act: &mut Active,
                           segments: &mut Vec<Vec<SegmentRecord>>,
                           tau: &mut [f64],
                           next: &mut [f64],
                           rows: &[usize],
                           decoded: Var|
         -> Result<()> {
            let old = Self::select(tape, *act, rows)?;
            let z = self.encode_on(tape, &bound, decoded)?;
            let at: Vec<f64> = rows.iter().map(|&b| next[b]).collect();
            let sel: Vec<f64> = rows.iter().map(|&b| next[b] - tau[b]).collect();
            let fresh = self.cell_active(tape, &bound, old, &sel, z)?;
            record(tape, segments, fresh, rows, &at);
            let new_dts = tape.value(fresh.dt).data().to_vec();
            *act = Self::merge(tape, *act, rows, fresh)?;
            for (j, &b) in rows.iter().enumerate() {
                tau[b] = at[j];
                next[b] = at[j] + new_dts[j].max(1.0);
            }
            Ok(())
        };

        for t in p_len..=horizon {
            let tf = t as f64;
            let between: Vec<usize> = (0..b_size).filter(|&b| next[b] < tf).collect();
            if !between.is_empty() {
                let old = Self::select(tape, act, &between)?;
                let el: Vec<f64> = between.iter().map(|&b| next[b] - tau[b]).collect();
                let hid = Self::hidden_on(tape, old.h, old.h_dot, &el)?;
                let xhat = self.decode_on(tape, &bound, hid)?;
                advance(tape, &mut act, &mut segments, &mut tau, &mut next, &between, xhat)?;
            }
            let elapsed: Vec<f64> = tau.iter().map(|&s| tf - s).collect();
            let hid = Self::hidden_on(tape, act.h, act.h_dot, &elapsed)?;
            let xhat = self.decode_on(tape, &bound, hid)?;
            for (b, row) in tape.value(xhat).rows().enumerate() {
                predictions[b].extend_from_slice(row);
            }
            if t == horizon {
                break;
            }
            let due: Vec<usize> = (0..b_size).filter(|&b| next[b] == tf).collect();
            if !due.is_empty() {
                let decoded = tape.select_rows(xhat, &due)?;
                advance(tape, &mut act, &mut segments, &mut tau, &mut next, &due, decoded)?;
            }
        }

        for segs in &mut segments {
            Rollout::finish_durations(segs, horizon);
        }
        Ok(Rollout {
            horizon,
            obs_dim: dim,
            predictions,
            function_evals: vec![0; b_size],
            segments,
        })
    }
}
