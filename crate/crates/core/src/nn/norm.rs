use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Smallest per-feature scale used when standardizing.
pub const MIN_SCALE: f64 = 0.1;

/// Fixed per-feature shift and scale applied around a network: inputs are
/// mapped to `(x - mean) / scale`, outputs back to `y * scale + mean`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-feature mean and standard deviation of `rows`, with the deviation
    /// floored at [`MIN_SCALE`].
    pub fn fit<'a>(dim: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        let mut n = 0usize;
        for row in rows {
            if row.len() != dim {
                return Err(Error::ShapeMismatch {
                    op: "standardizer_fit",
                    lhs: vec![dim],
                    rhs: vec![row.len()],
                });
            }
            for (j, &x) in row.iter().enumerate() {
                sum[j] += x;
                sq[j] += x * x;
            }
            n += 1;
        }
        if n == 0 {
            return Ok(Self::identity(dim));
        }
        let n = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(MIN_SCALE))
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_identity(&self) -> bool {
        self.mean.iter().all(|&m| m == 0.0) && self.scale.iter().all(|&s| s == 1.0)
    }

    pub fn normalize_on(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.is_identity() {
            return Ok(x);
        }
        let inv: Vec<f64> = self.scale.iter().map(|s| 1.0 / s).collect();
        let shift: Vec<f64> = self.mean.iter().zip(&inv).map(|(m, i)| -m * i).collect();
        tape.col_affine(x, &inv, &shift)
    }

    pub fn denormalize_on(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        if self.is_identity() {
            return Ok(y);
        }
        tape.col_affine(y, &self.scale, &self.mean)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn fit_recovers_moments_and_floors_flat_features() {
        let rows: Vec<[f64; 2]> = vec![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(2, rows.iter().map(|r| &r[..])).unwrap();
        assert_eq!(s.mean, vec![2.0, 5.0]);
        assert_eq!(s.scale, vec![1.0, MIN_SCALE]);
    }

    #[test]
    fn normalize_then_denormalize_round_trips() {
        let s = Standardizer {
            mean: vec![10.0, -1.0],
            scale: vec![4.0, 0.5],
        };
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 2], vec![14.0, 0.0]).unwrap());
        let n = s.normalize_on(&mut tape, x).unwrap();
        assert_eq!(tape.value(n).data(), &[1.0, 2.0]);
        let back = s.denormalize_on(&mut tape, n).unwrap();
        assert_eq!(tape.value(back).data(), &[14.0, 0.0]);
    }
}
