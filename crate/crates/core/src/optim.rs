//! Adan and Adam over named groups of flat parameter tensors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    #[default]
    Adan,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Adan uses all three; Adam uses the first two.
    pub betas: [f64; 3],
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn adan(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adan,
            lr,
            betas: [0.98, 0.92, 0.99],
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            betas: [0.9, 0.999, 0.0],
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One tensor to update: parameters, their gradient, and an lr multiplier.
pub struct ParamTensor<'a, T> {
    pub group: &'static str,
    pub params: &'a mut [T],
    pub grads: &'a [T],
    pub lr_scale: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Slot<T> {
    exp_avg: Vec<T>,
    exp_avg_sq: Vec<T>,
    /// Adan only.
    exp_avg_diff: Vec<T>,
    prev_grad: Vec<T>,
}

/// Moment buffers per tensor plus the shared step counter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            slots: Vec::new(),
        }
    }

    /// Applies one update to every tensor. Gradients are checked for
    /// non-finite values before anything is modified.
    pub fn step(&mut self, cfg: &OptimConfig, tensors: &mut [ParamTensor<'_, T>]) -> Result<()> {
        if !(cfg.lr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be > 0, got {}",
                cfg.lr
            )));
        }
        for t in tensors.iter() {
            if t.params.len() != t.grads.len() {
                return Err(Error::ShapeMismatch(format!(
                    "gradient length for group `{}`",
                    t.group
                )));
            }
            if t.grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    group: t.group.to_string(),
                });
            }
        }
        if self.slots.is_empty() {
            self.slots = tensors
                .iter()
                .map(|t| {
                    let z = vec![T::zero(); t.params.len()];
                    let adan = cfg.kind == OptimizerKind::Adan;
                    Slot {
                        exp_avg: z.clone(),
                        exp_avg_sq: z.clone(),
                        exp_avg_diff: if adan { z.clone() } else { Vec::new() },
                        prev_grad: if adan { t.grads.to_vec() } else { Vec::new() },
                    }
                })
                .collect();
        } else if self.slots.len() != tensors.len()
            || self
                .slots
                .iter()
                .zip(tensors.iter())
                .any(|(s, t)| s.exp_avg.len() != t.params.len())
        {
            return Err(Error::ShapeMismatch(
                "optimizer state does not match parameters".into(),
            ));
        }
        self.step += 1;
        for (slot, t) in self.slots.iter_mut().zip(tensors.iter_mut()) {
            let lr = cfg.lr * t.lr_scale;
            match cfg.kind {
                OptimizerKind::Adan => adan_update(slot, t.params, t.grads, cfg, lr, self.step),
                OptimizerKind::Adam => adam_update(slot, t.params, t.grads, cfg, lr, self.step),
            }
        }
        Ok(())
    }
}

fn adan_update<T: Real>(
    slot: &mut Slot<T>,
    params: &mut [T],
    grads: &[T],
    cfg: &OptimConfig,
    lr: f64,
    step: u64,
) {
    let [b1, b2, b3] = cfg.betas;
    let k = step as i32;
    let bc1 = 1.0 - b1.powi(k);
    let bc2 = 1.0 - b2.powi(k);
    let bc3_sqrt = (1.0 - b3.powi(k)).sqrt();
    let (b1t, b2t, b3t) = (T::lit(b1), T::lit(b2), T::lit(b3));
    let (one, eps) = (T::one(), T::lit(cfg.eps));
    let (step1, step2) = (T::lit(lr / bc1), T::lit(lr * b2 / bc2));
    let bc3_sqrt = T::lit(bc3_sqrt);
    let decay = T::lit(1.0 + lr * cfg.weight_decay);
    for i in 0..params.len() {
        let g = grads[i];
        let diff = g - slot.prev_grad[i];
        let m = b1t * slot.exp_avg[i] + (one - b1t) * g;
        let d = b2t * slot.exp_avg_diff[i] + (one - b2t) * diff;
        let u = g + b2t * diff;
        let n = b3t * slot.exp_avg_sq[i] + (one - b3t) * u * u;
        let denom = n.sqrt() / bc3_sqrt + eps;
        let p = params[i] - (step1 * m + step2 * d) / denom;
        params[i] = if cfg.weight_decay != 0.0 {
            p / decay
        } else {
            p
        };
        slot.exp_avg[i] = m;
        slot.exp_avg_diff[i] = d;
        slot.exp_avg_sq[i] = n;
        slot.prev_grad[i] = g;
    }
}

fn adam_update<T: Real>(
    slot: &mut Slot<T>,
    params: &mut [T],
    grads: &[T],
    cfg: &OptimConfig,
    lr: f64,
    step: u64,
) {
    let [b1, b2, _] = cfg.betas;
    let k = step as i32;
    let bc1 = T::lit(1.0 - b1.powi(k));
    let bc2_sqrt = T::lit((1.0 - b2.powi(k)).sqrt());
    let (b1t, b2t, one, eps, lr) = (
        T::lit(b1),
        T::lit(b2),
        T::one(),
        T::lit(cfg.eps),
        T::lit(lr),
    );
    let wd = T::lit(cfg.weight_decay);
    for i in 0..params.len() {
        let g = grads[i] + wd * params[i];
        let m = b1t * slot.exp_avg[i] + (one - b1t) * g;
        let v = b2t * slot.exp_avg_sq[i] + (one - b2t) * g * g;
        params[i] -= lr * (m / bc1) / (v.sqrt() / bc2_sqrt + eps);
        slot.exp_avg[i] = m;
        slot.exp_avg_sq[i] = v;
    }
}
