//! Adam with decoupled weight decay.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::nn::Parameters;

/// Optimizer hyperparameters. The paper fixes only the learning rate and
/// weight decay; the moment constants are the usual defaults.
#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-array first/second moment state.
pub struct AdamW {
    cfg: AdamWConfig,
    m: BTreeMap<String, ArrayD<f64>>,
    v: BTreeMap<String, ArrayD<f64>>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig) -> AdamW {
        AdamW {
            cfg,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            step: 0,
        }
    }

    /// Apply one update. `grads` maps array names to gradients; arrays
    /// without a gradient entry are left untouched (and not decayed).
    pub fn step(&mut self, params: &mut Parameters, grads: &BTreeMap<String, ArrayD<f64>>) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, grad) in grads {
            let Ok(p) = params.get_mut(name) else { continue };
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(grad.raw_dim()));
            ndarray::Zip::from(&mut *m).and(grad).for_each(|m, &g| {
                *m = self.cfg.beta1 * *m + (1.0 - self.cfg.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(grad).for_each(|v, &g| {
                *v = self.cfg.beta2 * *v + (1.0 - self.cfg.beta2) * g * g;
            });
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mh = m / bc1;
                    let vh = v / bc2;
                    *p -= self.cfg.lr * (mh / (vh.sqrt() + self.cfg.eps))
                        + self.cfg.lr * self.cfg.weight_decay * *p;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, ModelConfig, Parts};
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn step_moves_against_gradient() {
        let cfg = ModelConfig::new(625, 0, 8);
        let mut params = init_params(&cfg, &Parts::encoder_only(), 0);
        let before = params.get("embed.bias").unwrap().clone();
        let mut grads = BTreeMap::new();
        grads.insert(
            "embed.bias".to_string(),
            ArrayD::from_elem(IxDyn(&[8]), 1.0),
        );
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..Default::default()
        });
        opt.step(&mut params, &grads);
        let after = params.get("embed.bias").unwrap();
        for (a, b) in after.iter().zip(before.iter()) {
            assert!(a < b);
        }
    }

    #[test]
    fn decay_shrinks_untouched_by_gradient_magnitude() {
        let cfg = ModelConfig::new(625, 0, 8);
        let mut params = init_params(&cfg, &Parts::encoder_only(), 1);
        params
            .get_mut("embed.weight")
            .unwrap()
            .mapv_inplace(|_| 2.0);
        let mut grads = BTreeMap::new();
        grads.insert(
            "embed.weight".to_string(),
            ArrayD::zeros(IxDyn(&[12 * 625, 8])),
        );
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.5,
            weight_decay: 0.1,
            ..Default::default()
        });
        opt.step(&mut params, &grads);
        let w = params.get("embed.weight").unwrap();
        assert!(w.iter().all(|&x| (x - (2.0 - 0.5 * 0.1 * 2.0)).abs() < 1e-12));
    }
}
