use rand::Rng;

use super::params::{Bound, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

fn check_width(op: &'static str, tape: &Tape, x: Var, want: usize) -> Result<()> {
    let shape = tape.value(x).shape();
    if shape.len() != 2 || shape[1] != want {
        return Err(Error::ShapeMismatch {
            op,
            lhs: shape.to_vec(),
            rhs: vec![want],
        });
    }
    Ok(())
}

/// `y = x W + b`
#[derive(Debug, Clone)]
pub struct Affine {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    /// Weights and biases uniform in `±sqrt(1/fan_in)`.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let bound = (1.0 / in_dim as f64).sqrt();
        let weight = params.add_uniform(format!("{name}.weight"), &[in_dim, out_dim], bound, rng)?;
        let bias = params.add_uniform(format!("{name}.bias"), &[out_dim], bound, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        check_width("affine", tape, x, self.in_dim)?;
        let y = tape.matmul(x, bound.var(self.weight))?;
        tape.add(y, bound.var(self.bias))
    }
}

/// Residual MLP: input affine, two residual ReLU blocks `y = relu(W x + b) + x`
/// at the hidden width, output affine.
#[derive(Debug, Clone)]
pub struct ResidualMlp {
    pub input: Affine,
    pub blocks: Vec<Affine>,
    pub output: Affine,
}

pub const RESIDUAL_BLOCKS: usize = 2;

impl ResidualMlp {
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let input = Affine::new(params, &format!("{name}.in"), in_dim, hidden, rng)?;
        let blocks = (0..RESIDUAL_BLOCKS)
            .map(|i| Affine::new(params, &format!("{name}.block{i}"), hidden, hidden, rng))
            .collect::<Result<_>>()?;
        let output = Affine::new(params, &format!("{name}.out"), hidden, out_dim, rng)?;
        Ok(Self {
            input,
            blocks,
            output,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.input.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    pub fn hidden(&self) -> usize {
        self.input.out_dim
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let mut h = self.input.forward(tape, bound, x)?;
        for block in &self.blocks {
            let pre = block.forward(tape, bound, h)?;
            let act = tape.relu(pre);
            h = tape.add(act, h)?;
        }
        self.output.forward(tape, bound, h)
    }
}

/// Gated recurrent unit with fused gate matrices in the order
/// (reset, update, candidate).
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub state_dim: usize,
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_state: ParamId,
    pub b_state: ParamId,
}

impl GruCell {
    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn new(
        params: &mut ParamSet,
        name: &str,
        input_dim: usize,
        state_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let g = 3 * state_dim;
        let w_input = params.add_uniform(
            format!("{name}.w_input"),
            &[input_dim, g],
            (1.0 / input_dim as f64).sqrt(),
            rng,
        )?;
        let b_input = params.add(format!("{name}.b_input"), &[g], vec![0.0; g])?;
        let w_state = params.add_uniform(
            format!("{name}.w_state"),
            &[state_dim, g],
            (1.0 / state_dim as f64).sqrt(),
            rng,
        )?;
        let b_state = params.add(format!("{name}.b_state"), &[g], vec![0.0; g])?;
        Ok(Self {
            input_dim,
            state_dim,
            w_input,
            b_input,
            w_state,
            b_state,
        })
    }

    /// One recurrence step:
    /// `r = σ(..)`, `u = σ(..)`, `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
    /// `h' = (1 - u) ⊙ n + u ⊙ h`.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, state: Var, input: Var) -> Result<Var> {
        check_width("gru_step(state)", tape, state, self.state_dim)?;
        check_width("gru_step(input)", tape, input, self.input_dim)?;
        let rows = (tape.value(state).shape()[0], tape.value(input).shape()[0]);
        if rows.0 != rows.1 {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                lhs: tape.value(state).shape().to_vec(),
                rhs: tape.value(input).shape().to_vec(),
            });
        }
        let d = self.state_dim;
        let gi = tape.matmul(input, bound.var(self.w_input))?;
        let gi = tape.add(gi, bound.var(self.b_input))?;
        let gh = tape.matmul(state, bound.var(self.w_state))?;
        let gh = tape.add(gh, bound.var(self.b_state))?;

        let ri = tape.slice_cols(gi, 0, d)?;
        let rh = tape.slice_cols(gh, 0, d)?;
        let r = tape.add(ri, rh)?;
        let r = tape.sigmoid(r);

        let ui = tape.slice_cols(gi, d, d)?;
        let uh = tape.slice_cols(gh, d, d)?;
        let u = tape.add(ui, uh)?;
        let u = tape.sigmoid(u);

        let ni = tape.slice_cols(gi, 2 * d, d)?;
        let nh = tape.slice_cols(gh, 2 * d, d)?;
        let gated = tape.mul(r, nh)?;
        let n = tape.add(ni, gated)?;
        let n = tape.tanh(n);

        // n + u ⊙ (h - n)
        let diff = tape.sub(state, n)?;
        let mixed = tape.mul(u, diff)?;
        tape.add(n, mixed)
    }
}
