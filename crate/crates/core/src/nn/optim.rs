use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::engine::Gradients;
use crate::nn::params::ParameterSet;
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    SgdMomentum { lr: f64, momentum: f64 },
}

impl OptimizerKind {
    pub fn adam(lr: f64) -> Self {
        OptimizerKind::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn sgd_momentum(lr: f64) -> Self {
        OptimizerKind::SgdMomentum { lr, momentum: 0.9 }
    }
}

/// Optimizer with one moment buffer (two for Adam) per parameter buffer.
///
/// Buffers are addressed by position; the same sequence of buffer shapes
/// must be passed on every step.
#[derive(Debug, Clone)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    step: u64,
}

/// A parameter buffer, its gradient and optional freeze flags.
pub struct Slot<'a, T> {
    pub param: &'a mut [T],
    pub grad: &'a [T],
    pub frozen: Option<&'a [bool]>,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &[Vec<T>] {
        &self.first
    }

    /// One update over all slots. Frozen entries and their moments are left
    /// untouched.
    pub fn step_slots(&mut self, slots: Vec<Slot<'_, T>>) -> Result<()> {
        if self.first.is_empty() {
            self.first = slots.iter().map(|s| vec![T::zero(); s.param.len()]).collect();
            if matches!(self.kind, OptimizerKind::Adam { .. }) {
                self.second = self.first.clone();
            }
        }
        if slots.len() != self.first.len() {
            return Err(Error::Shape {
                context: "optimizer slot count",
                expected: vec![self.first.len()],
                actual: vec![slots.len()],
            });
        }
        for (i, s) in slots.iter().enumerate() {
            let frozen_ok = s.frozen.is_none_or(|f| f.len() == s.param.len());
            if s.param.len() != self.first[i].len() || s.grad.len() != s.param.len() || !frozen_ok {
                return Err(Error::Shape {
                    context: "optimizer slot",
                    expected: vec![self.first[i].len()],
                    actual: vec![s.param.len(), s.grad.len()],
                });
            }
        }
        self.step += 1;
        match self.kind {
            OptimizerKind::SgdMomentum { lr, momentum } => {
                let (lr, mu) = (T::of(lr), T::of(momentum));
                for (s, vel) in slots.into_iter().zip(&mut self.first) {
                    for j in 0..s.param.len() {
                        if s.frozen.is_some_and(|f| f[j]) {
                            continue;
                        }
                        vel[j] = mu * vel[j] + s.grad[j];
                        s.param[j] = s.param[j] - lr * vel[j];
                    }
                }
            }
            OptimizerKind::Adam { lr, beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = T::of(1.0 - beta1.powi(t));
                let c2 = T::of(1.0 - beta2.powi(t));
                let (lr, b1, b2, eps) = (T::of(lr), T::of(beta1), T::of(beta2), T::of(eps));
                let one = T::one();
                for ((s, m), v) in slots.into_iter().zip(&mut self.first).zip(&mut self.second) {
                    for j in 0..s.param.len() {
                        if s.frozen.is_some_and(|f| f[j]) {
                            continue;
                        }
                        let g = s.grad[j];
                        m[j] = b1 * m[j] + (one - b1) * g;
                        v[j] = b2 * v[j] + (one - b2) * g * g;
                        let m_hat = m[j] / c1;
                        let v_hat = v[j] / c2;
                        s.param[j] = s.param[j] - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }

    /// Update kernels (respecting freeze flags) and biases.
    pub fn step(&mut self, params: &mut ParameterSet<T>, grads: &Gradients<T>) -> Result<()> {
        if grads.kernels.len() != params.layers.len() || grads.biases.len() != params.layers.len() {
            return Err(Error::Shape {
                context: "gradient layer count",
                expected: vec![params.layers.len()],
                actual: vec![grads.kernels.len(), grads.biases.len()],
            });
        }
        let mut slots = Vec::with_capacity(2 * params.layers.len());
        for ((layer, gk), gb) in params.layers.iter_mut().zip(&grads.kernels).zip(&grads.biases) {
            slots.push(Slot {
                param: layer.kernel.as_mut_slice(),
                grad: gk,
                frozen: Some(&layer.frozen),
            });
            slots.push(Slot {
                param: layer.bias.as_mut_slice(),
                grad: gb,
                frozen: None,
            });
        }
        self.step_slots(slots)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_steps(kind: OptimizerKind, grads: &[f64]) -> (f64, Optimizer<f64>) {
        let mut opt = Optimizer::new(kind);
        let mut p = [0.0f64];
        for &g in grads {
            opt.step_slots(vec![Slot {
                param: &mut p,
                grad: &[g],
                frozen: None,
            }])
            .unwrap();
        }
        (p[0], opt)
    }

    #[test]
    fn momentum_closed_form() {
        let (p, opt) = scalar_steps(OptimizerKind::SgdMomentum { lr: 1.0, momentum: 0.9 }, &[1.0, 1.0]);
        assert!((opt.moments()[0][0] - 1.9).abs() < 1e-12);
        assert!((p + 2.9).abs() < 1e-12);
        assert_eq!(opt.steps(), 2);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let lr = 1.2e-3;
        let (p, _) = scalar_steps(OptimizerKind::adam(lr), &[1.0]);
        assert!((p + lr / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn frozen_entries_bit_identical() {
        let mut opt = Optimizer::new(OptimizerKind::adam(0.1));
        let mut p = [0.25f32, -1.5, 3.0];
        let before = p;
        for _ in 0..3 {
            opt.step_slots(vec![Slot {
                param: &mut p,
                grad: &[1.0, -2.0, 0.5],
                frozen: Some(&[true, true, true]),
            }])
            .unwrap();
        }
        assert_eq!(p.map(f32::to_bits), before.map(f32::to_bits));
    }

    #[test]
    fn slot_shape_checked() {
        let mut opt = Optimizer::new(OptimizerKind::sgd_momentum(0.1));
        let mut p = [0.0f64; 2];
        let r = opt.step_slots(vec![Slot {
            param: &mut p,
            grad: &[1.0],
            frozen: None,
        }]);
        assert!(r.is_err());
    }
}
