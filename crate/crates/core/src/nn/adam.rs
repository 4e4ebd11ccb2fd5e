use super::params::ParamSet;
use crate::error::{Error, Result};

/// Adam with a multiplicative step-decay schedule.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Learning rate is multiplied by `decay` every `decay_interval` steps.
    pub decay: f64,
    pub decay_interval: usize,
    step: usize,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64, decay: f64, decay_interval: usize) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            base_lr: lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay,
            decay_interval: decay_interval.max(1),
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Learning rate used by the next call to [`AdamState::step`].
    pub fn current_lr(&self) -> f64 {
        self.base_lr * self.decay.powi((self.step / self.decay_interval) as i32)
    }

    pub fn first_moments(&self) -> &[Vec<f64>] {
        &self.first
    }

    /// Applies one update using the accumulated gradients of `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.first.len(),
                params.len()
            )));
        }
        if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGradient(name.to_string()));
        }
        let lr = self.current_lr();
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((_, t), m), v) in params
            .tensors_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let g = t.grad().expect("checked above").to_vec();
            for (((x, &gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.add("theta", &[1], vec![value]).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = ParamSet::new();
        p.add("w", &[3], vec![0.0, 0.0, 0.0]).unwrap();
        let mut opt = AdamState::new(&p, 1e-3, 0.9, 5000);
        let id = p.id("w").unwrap();
        p.get_mut(id).accumulate_grad(&[2.5, -0.01, 40.0]).unwrap();
        opt.step(&mut p).unwrap();
        for (x, s) in p.get(id).data().iter().zip([-1.0, 1.0, -1.0]) {
            assert!((x - s * 1e-3).abs() < 1e-9, "{x}");
        }
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = single(0.7);
        let mut opt = AdamState::new(&p, 1e-3, 0.9, 5000);
        for _ in 0..5 {
            p.zero_grad();
            let id = p.id("theta").unwrap();
            p.get_mut(id).accumulate_grad(&[0.0]).unwrap();
            opt.step(&mut p).unwrap();
        }
        assert_eq!(p.get(p.id("theta").unwrap()).item(), 0.7);
    }

    #[test]
    fn missing_gradient_errors() {
        let mut p = single(1.0);
        let mut opt = AdamState::new(&p, 1e-3, 0.9, 5000);
        assert!(matches!(opt.step(&mut p), Err(Error::MissingGradient(_))));
    }

    #[test]
    fn quadratic_converges_in_100_steps() {
        let mut p = single(1.0);
        let id = p.id("theta").unwrap();
        let mut opt = AdamState::new(&p, 0.05, 0.9, 5000);
        for _ in 0..100 {
            p.zero_grad();
            let theta = p.get(id).item();
            p.get_mut(id).accumulate_grad(&[2.0 * theta]).unwrap();
            opt.step(&mut p).unwrap();
        }
        assert!(p.get(id).item().abs() < 0.1, "{}", p.get(id).item());
    }

    #[test]
    fn learning_rate_decays_at_interval_boundaries() {
        let mut p = single(1.0);
        let id = p.id("theta").unwrap();
        let mut opt = AdamState::new(&p, 1e-3, 0.9, 3);
        let mut seen = Vec::new();
        for _ in 0..7 {
            seen.push(opt.current_lr());
            p.zero_grad();
            p.get_mut(id).accumulate_grad(&[1.0]).unwrap();
            opt.step(&mut p).unwrap();
        }
        let expect = [1e-3, 1e-3, 1e-3, 9e-4, 9e-4, 9e-4, 8.1e-4];
        for (a, b) in seen.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(opt.steps_taken(), 7);
    }
}
