use super::network::{Gradients, Network};
use crate::error::{Error, Result};

/// Adam with an exponentially decaying learning rate.
#[derive(Clone, Debug)]
pub struct Adam {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fraction of `base_lr` left after `total_steps`.
    pub final_fraction: f64,
    pub total_steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Network, base_lr: f64, total_steps: u64) -> Self {
        let zeros: Vec<Vec<f64>> = net.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Self {
            base_lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_fraction: 1e-3,
            total_steps: total_steps.max(1),
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn learning_rate(&self, iteration: u64) -> f64 {
        let frac = iteration.min(self.total_steps) as f64 / self.total_steps as f64;
        self.base_lr * self.final_fraction.powf(frac)
    }

    /// Descends along `grads` (which are gradients of a loss to minimise).
    pub fn step(&mut self, net: &mut Network, grads: &Gradients, iteration: u64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let lr = self.learning_rate(iteration);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(&grads.tensors)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
