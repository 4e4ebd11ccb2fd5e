//! Network building blocks: affine maps, residual MLPs, GRU cells, Adam.

mod adam;
mod layers;
mod norm;
mod params;

pub use adam::AdamState;
pub use layers::{Affine, GruCell, ResidualMlp, RESIDUAL_BLOCKS};
pub use norm::{Standardizer, MIN_SCALE};
pub use params::{Bound, ParamId, ParamSet};
