//! Adam with a reduce-on-plateau learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::params::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlateauConfig {
    pub patience: usize,
    /// Relative improvement required: a loss counts as better when it is
    /// below `best * (1 - threshold)`.
    pub threshold: f64,
    pub factor: f64,
    pub min_lr: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self {
            patience: 40,
            threshold: 1e-2,
            factor: 0.5,
            min_lr: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlateauState {
    pub best: Option<f64>,
    pub bad_epochs: usize,
    pub reductions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
    lr: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    pub sched: PlateauState,
}

impl OptimizerState {
    pub fn new(params: &ParamSet, adam: AdamConfig, plateau: PlateauConfig) -> Result<Self> {
        if adam.lr.is_nan() || adam.lr <= 0.0 {
            return Err(invalid!("learning rate must be strictly positive, got {}", adam.lr));
        }
        if !(plateau.factor > 0.0 && plateau.factor < 1.0) {
            return Err(invalid!("plateau factor must lie in (0, 1), got {}", plateau.factor));
        }
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Ok(Self {
            adam,
            plateau,
            lr: adam.lr,
            step: 0,
            first: zeros.clone(),
            second: zeros,
            sched: PlateauState {
                best: None,
                bad_epochs: 0,
                reductions: 0,
            },
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam update from the gradients stored on `params`.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.first.len() {
            return Err(invalid!(
                "optimizer built for {} parameters, got {}",
                self.first.len(),
                params.len()
            ));
        }
        for (name, t) in params.iter() {
            if t.grad.is_none() {
                return Err(invalid!("parameter {name} has no gradient"));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps, .. } = self.adam;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((t, m), v) in params.tensors_mut().zip(&mut self.first).zip(&mut self.second) {
            let g = t.grad.take().expect("checked above");
            for (((p, gi), mi), vi) in t.data_mut().iter_mut().zip(&g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *p -= self.lr * mhat / (vhat.sqrt() + eps);
            }
            t.grad = Some(g);
        }
        Ok(())
    }

    /// Feeds one validation loss to the plateau scheduler. Returns true when
    /// the learning rate was reduced.
    pub fn observe_val_loss(&mut self, loss: f64) -> bool {
        let s = &mut self.sched;
        match s.best {
            Some(best) if loss >= best * (1.0 - self.plateau.threshold) => {
                s.bad_epochs += 1;
            }
            _ => {
                s.best = Some(loss);
                s.bad_epochs = 0;
                return false;
            }
        }
        if s.bad_epochs >= self.plateau.patience {
            s.bad_epochs = 0;
            let next = (self.lr * self.plateau.factor).max(self.plateau.min_lr);
            if next < self.lr {
                self.lr = next;
                s.reductions += 1;
                return true;
            }
        }
        false
    }
}
