use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tensor::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Moments {
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

/// Adam with decoupled weight decay.
///
/// The decay is applied to the parameter directly
/// (`p -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)`) and never enters the
/// moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl AdamW {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(&id).map(|m| m.second.as_slice())
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.moments.get(&id).map(|m| m.first.as_slice())
    }

    /// Update `params` from their accumulated gradients, then clear those
    /// gradients. Fails without touching anything if a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore, params: &[ParamId]) -> Result<()> {
        if let Some(id) = params.iter().find(|id| store.get(**id).grad().is_none()) {
            return Err(Error::Contract(format!(
                "parameter `{}` has no gradient",
                store.name(*id)
            )));
        }
        let AdamConfig {
            learning_rate: lr,
            weight_decay: wd,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        for &id in params {
            let tensor = store.get_mut(id);
            let grad = tensor.grad().expect("checked above").to_vec();
            let n = grad.len();
            let m = self.moments.entry(id).or_insert_with(|| Moments {
                first: vec![0.0; n],
                second: vec![0.0; n],
                steps: 0,
            });
            m.steps += 1;
            let bc1 = 1.0 - b1.powi(m.steps as i32);
            let bc2 = 1.0 - b2.powi(m.steps as i32);
            for (i, p) in tensor.values_mut().iter_mut().enumerate() {
                let gi = grad[i];
                m.first[i] = b1 * m.first[i] + (1.0 - b1) * gi;
                m.second[i] = b2 * m.second[i] + (1.0 - b2) * gi * gi;
                let mh = m.first[i] / bc1;
                let vh = m.second[i] / bc2;
                *p -= lr * (mh / (vh.sqrt() + eps) + wd * *p);
            }
            tensor.clear_grad();
        }
        self.step += 1;
        Ok(())
    }
}
