//! Optimizers and learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LrSchedule {
    /// `base * (1 - step / max_step)^power`.
    Poly { base_lr: f64, max_step: usize, power: f64 },
    /// `base * decay_rate^(step / decay_steps)`.
    ExpDecay { base_lr: f64, decay_rate: f64, decay_steps: usize },
    Constant { base_lr: f64 },
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        match *self {
            LrSchedule::Poly { base_lr, max_step, power } => {
                if step > max_step {
                    return Err(Error::StepOutOfRange { step, max_step });
                }
                Ok(base_lr * (1.0 - step as f64 / max_step as f64).powf(power))
            }
            LrSchedule::ExpDecay { base_lr, decay_rate, decay_steps } => {
                Ok(base_lr * decay_rate.powf(step as f64 / decay_steps as f64))
            }
            LrSchedule::Constant { base_lr } => Ok(base_lr),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Poly { base_lr, max_step, power } => base_lr >= 0.0 && max_step > 0 && power >= 0.0,
            LrSchedule::ExpDecay { base_lr, decay_rate, decay_steps } => {
                base_lr >= 0.0 && decay_rate > 0.0 && decay_steps > 0
            }
            LrSchedule::Constant { base_lr } => base_lr >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid learning-rate schedule {self:?}")))
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, step: usize) -> Result<f64> {
    schedule.lr_at(step)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OptimizerKind {
    /// `v <- mu v + g; theta <- theta - lr v`.
    MomentumSgd { momentum: f64 },
    /// Bias-corrected first and second moments.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

/// Optimizer state for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    ids: Vec<ParamId>,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, ids: Vec<ParamId>, store: &ParamStore<T>) -> Self {
        let zeros = |ids: &[ParamId]| ids.iter().map(|&id| vec![T::zero(); store.get(id).value.numel()]).collect();
        let second = match kind {
            OptimizerKind::Adam { .. } => zeros(&ids),
            OptimizerKind::MomentumSgd { .. } => Vec::new(),
        };
        Optimizer { kind, first: zeros(&ids), second, ids, steps: 0 }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Zeroes every slot and the step count.
    pub fn reset(&mut self) {
        for s in self.first.iter_mut().chain(self.second.iter_mut()) {
            s.iter_mut().for_each(|v| *v = T::zero());
        }
        self.steps = 0;
    }

    /// Applies one update; `grads[i]` belongs to `ids()[i]`.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::shape("optimizer", format!("{} grads for {} params", grads.len(), self.ids.len())));
        }
        self.steps += 1;
        let lr = T::lit(lr);
        for (i, (&id, grad)) in self.ids.iter().zip(grads).enumerate() {
            let theta = store.value_mut(id);
            if theta.shape() != grad.shape() {
                return Err(Error::shape("optimizer", format!("param {:?} vs grad {:?}", theta.shape(), grad.shape())));
            }
            let theta = theta.data_mut();
            match self.kind {
                OptimizerKind::MomentumSgd { momentum } => {
                    let mu = T::lit(momentum);
                    for ((t, v), &g) in theta.iter_mut().zip(self.first[i].iter_mut()).zip(grad.data()) {
                        *v = mu * *v + g;
                        *t = *t - lr * *v;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let (b1, b2, eps) = (T::lit(beta1), T::lit(beta2), T::lit(eps));
                    let c1 = T::one() - T::lit(beta1.powi(self.steps as i32));
                    let c2 = T::one() - T::lit(beta2.powi(self.steps as i32));
                    let (m, v) = (&mut self.first[i], &mut self.second[i]);
                    for (((t, m), v), &g) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(grad.data()) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mh = *m / c1;
                        let vh = *v / c2;
                        *t = *t - lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
