use crate::error::{Error, Result};
use crate::numerics::{GradSet, ParamStore};

use super::TrainConfig;

/// First and second moment buffers for every parameter, in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_config(store: &ParamStore, cfg: &TrainConfig) -> Self {
        Self::new(store, cfg.beta1, cfg.beta2, cfg.epsilon)
    }

    /// One bias-corrected update of every parameter with `scale * grads`.
    /// Parameters without a gradient are updated with a zero gradient.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradSet, scale: f64, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::dim("adam", &[self.m.len()], &[store.len()]));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            if m.len() != p.len() {
                return Err(Error::dim("adam", &[m.len()], p.shape()));
            }
            let g = grads.get(id);
            for (k, w) in p.values_mut().iter_mut().enumerate() {
                let gk = g.map_or(0.0, |g| g[k] * scale);
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *w -= lr * mh / (vh.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

/// `base · rate^⌊step / interval⌋`.
pub fn lr_schedule(step: u64, base_lr: f64, decay_rate: f64, decay_interval: u64) -> f64 {
    base_lr * decay_rate.powf((step / decay_interval.max(1)) as f64)
}
