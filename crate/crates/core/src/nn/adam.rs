use serde::{Deserialize, Serialize};

use super::param::{Module, Param};
use super::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moment buffers follow the module's parameter
/// visiting order, which is fixed per architecture.
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step<M: Module<F> + ?Sized>(&mut self, module: &mut M) {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let lr_t = F::lit(c.learning_rate * bc2.sqrt() / bc1);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let eps_t = F::lit(c.eps * bc2.sqrt());
        let one = F::one();
        let mut idx = 0;
        let (m_all, v_all) = (&mut self.m, &mut self.v);
        module.visit_params_mut(&mut |p: &mut Param<F>| {
            if m_all.len() <= idx {
                m_all.push(vec![F::zero(); p.len()]);
                v_all.push(vec![F::zero(); p.len()]);
            }
            let (m, v) = (&mut m_all[idx], &mut v_all[idx]);
            for ((w, &g), (mi, vi)) in p.value.iter_mut().zip(&p.grad).zip(m.iter_mut().zip(v.iter_mut())) {
                *mi = b1 * *mi + (one - b1) * g;
                *vi = b2 * *vi + (one - b2) * g * g;
                *w -= lr_t * *mi / (vi.sqrt() + eps_t);
            }
            idx += 1;
        });
    }
}
