use crate::params::{Grads, ParamStore};

/// Adaptive-moment optimizer with per-tensor step counters.
///
/// A tensor whose batch gradient is exactly zero is left untouched and its
/// moments are not advanced, so a head whose task is masked across a whole
/// batch is not moved by stale momentum.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    steps: Vec<i32>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.numel()]).collect(),
            steps: vec![0; store.len()],
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) {
        for (idx, p) in store.iter_mut().enumerate() {
            let g = &grads.tensors[idx];
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            self.steps[idx] += 1;
            let t = self.steps[idx];
            let c1 = 1.0 - self.beta1.powi(t);
            let c2 = 1.0 - self.beta2.powi(t);
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
