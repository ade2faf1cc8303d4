use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::params::Parameters;
use crate::error::{Error, Result};

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zero accumulators shaped like `params`, default betas and epsilon.
    pub fn new<P: Parameters>(params: &P, learning_rate: f64) -> Self {
        Self::for_shapes(params.tensors().iter().map(|t| t.len()), learning_rate)
    }

    pub fn for_shapes(lengths: impl IntoIterator<Item = usize>, learning_rate: f64) -> Self {
        let lengths: Vec<usize> = lengths.into_iter().collect();
        AdamState {
            first_moment: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: lengths.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step<P: Parameters>(&mut self, params: &mut P, grads: &P, maximize: bool) -> Result<()> {
        self.step_tensors(params.tensors_mut(), grads.tensors(), maximize)
    }

    /// One update over an explicit list of tensors. With `maximize` set the
    /// parameters ascend the gradient.
    pub fn step_tensors(
        &mut self,
        params: Vec<&mut [f64]>,
        grads: Vec<&[f64]>,
        maximize: bool,
    ) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape(format!(
                "Adam tracks {} tensors, got {} parameters and {} gradients",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(&grads).enumerate() {
            if p.len() != self.first_moment[i].len() || g.len() != p.len() {
                return Err(Error::Shape(format!(
                    "tensor {i}: state {}, parameter {}, gradient {}",
                    self.first_moment[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let sign = if maximize { -1.0 } else { 1.0 };
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..p.len() {
                let gj = sign * g[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = m[j] / correction1;
                let v_hat = v[j] / correction2;
                p[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// Plain stochastic gradient descent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn step<P: Parameters>(&self, params: &mut P, grads: &P) -> Result<()> {
        if params.num_params() != grads.num_params() {
            return Err(Error::Shape("SGD parameter/gradient size mismatch".into()));
        }
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (pj, gj) in p.iter_mut().zip(g) {
                *pj -= self.learning_rate * gj;
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau learning rate: when the losses seen over the last
/// `patience_epochs` epochs fail to improve on the oldest of them by
/// `min_improvement`, the rate is multiplied by `decay_factor` (never below
/// `min_lr`) and the window restarts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub current_lr: f64,
    pub decay_factor: f64,
    pub patience_epochs: usize,
    pub min_improvement: f64,
    pub min_lr: f64,
    #[serde(skip)]
    pub loss_history: VecDeque<f64>,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64) -> Self {
        PlateauSchedule {
            current_lr: initial_lr,
            decay_factor: 0.1,
            patience_epochs: 20,
            min_improvement: 0.01,
            min_lr: 1e-7,
            loss_history: VecDeque::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.current_lr > 0.0
            && self.decay_factor > 0.0
            && self.decay_factor < 1.0
            && self.patience_epochs > 0
            && self.min_improvement > 0.0
            && self.min_lr > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid plateau schedule {self:?}")))
        }
    }

    /// Records one epoch loss and returns the (possibly reduced) rate.
    pub fn update(&mut self, epoch_loss: f64) -> f64 {
        self.loss_history.push_back(epoch_loss);
        if self.loss_history.len() < self.patience_epochs {
            return self.current_lr;
        }
        let oldest = self.loss_history[0];
        let best = self.loss_history.iter().copied().fold(f64::INFINITY, f64::min);
        if oldest - best < self.min_improvement {
            self.current_lr = (self.current_lr * self.decay_factor).max(self.min_lr);
            self.loss_history.clear();
        } else {
            self.loss_history.pop_front();
        }
        self.current_lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        for g in [0.3, -2.0, 1e-3] {
            let mut p = vec![1.0];
            let mut adam = AdamState::new(&p, 1e-3);
            adam.step(&mut p, &vec![g], false).unwrap();
            let expected = 1e-3 * g.abs() / (g.abs() + 1e-8);
            assert!(((1.0 - p[0]) * g.signum() - expected).abs() < 1e-15);
            assert_eq!(adam.first_moment[0][0] / (1.0 - 0.9), g);
        }
    }

    #[test]
    fn maximize_ascends() {
        let mut p = vec![0.0];
        let mut adam = AdamState::new(&p, 0.1);
        adam.step(&mut p, &vec![1.0], true).unwrap();
        assert!(p[0] > 0.0);
    }

    #[test]
    fn zero_gradient_keeps_params_and_counts() {
        let mut p = vec![1.0, -2.0];
        let mut adam = AdamState::new(&p, 1e-2);
        adam.step(&mut p, &vec![0.0, 0.0], false).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn adam_is_deterministic() {
        let mut a = (vec![0.5, 0.1], AdamState::new(&vec![0.0; 2], 1e-2));
        let mut b = a.clone();
        a.1.step(&mut a.0, &vec![0.2, -0.7], false).unwrap();
        b.1.step(&mut b.0, &vec![0.2, -0.7], false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![1.0, 2.0];
        let mut adam = AdamState::new(&vec![0.0], 1e-2);
        assert!(adam.step(&mut p, &vec![0.0, 0.0], false).is_err());
    }

    #[test]
    fn plateau_decays_on_flat_losses() {
        let mut s = PlateauSchedule::new(0.01);
        for _ in 0..19 {
            assert_eq!(s.update(1.0), 0.01);
        }
        let lr = s.update(1.0);
        assert!((lr - 0.001).abs() < 1e-18);
        assert!(s.loss_history.is_empty());
    }

    #[test]
    fn plateau_keeps_rate_while_improving() {
        let mut s = PlateauSchedule::new(0.01);
        for e in 0..200 {
            assert_eq!(s.update(10.0 - 0.02 * e as f64), 0.01);
        }
    }

    #[test]
    fn plateau_respects_min_lr() {
        let mut s = PlateauSchedule::new(1e-7);
        for _ in 0..100 {
            assert_eq!(s.update(1.0), 1e-7);
        }
        let mut s = PlateauSchedule::new(0.01);
        let mut last = s.current_lr;
        for _ in 0..1000 {
            let lr = s.update(1.0);
            assert!(lr <= last && lr >= 1e-7);
            last = lr;
        }
        assert_eq!(last, 1e-7);
    }
}
