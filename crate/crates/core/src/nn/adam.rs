use serde::{Deserialize, Serialize};

use super::Params;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are flat and follow the
/// parameter enumeration order.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<P: Params>(&mut self, params: &mut P, grads: &P) {
        let g: Vec<f64> = grads.flat();
        if self.m.is_empty() {
            self.m = vec![0.0; g.len()];
            self.v = vec![0.0; g.len()];
        }
        assert_eq!(self.m.len(), g.len(), "optimizer bound to a different parameter set");
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let mut i = 0;
        for (_, t) in params.tensors_mut() {
            for p in t.data.iter_mut() {
                let gi = g[i];
                self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * gi;
                self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * gi * gi;
                let mh = self.m[i] / bc1;
                let vh = self.v[i] / bc2;
                *p -= lr * mh / (vh.sqrt() + eps);
                i += 1;
            }
        }
    }
}
