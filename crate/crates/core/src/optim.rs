//! Adaptive moment estimation over a named parameter tree.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Vec<f64>>,
    pub second: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// One update of every parameter that has a gradient entry.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - libm::pow(beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2, self.step as f64);
        for (name, g) in grads.iter() {
            let Some(p) = params.get_mut(name) else { continue };
            if p.shape() != g.shape() {
                return Err(Error::Contract(alloc::format!("gradient shape mismatch for {name}")));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *w -= lr * mhat / (libm::sqrt(vhat) + eps);
            }
        }
        Ok(())
    }
}
