//! Piecewise-constant neural ODE sequence models.
//!
//! A PC-ODE keeps a latent state that moves linearly between sparse RNN cell
//! updates; the cell also predicts how long each linear segment lasts. This
//! crate holds the tensor engine, the network blocks, the PC-ODE model and
//! trainer, RNN and ODE-RNN baselines, the synthetic physics worlds used as
//! data, and a random-shooting billiards planner.

pub mod baselines;
pub mod error;
pub mod model;
pub mod nn;
pub mod pcode;
pub mod planning;
pub mod tensor;
pub mod train;
pub mod worlds;

pub use error::{Error, Result};
