use serde::{Deserialize, Serialize};

use super::{Parameterized, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
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

/// Adam with bias correction. Frozen parameters are skipped entirely.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
    step: u64,
}

impl Adam {
    pub fn new<P: Parameterized>(config: AdamConfig, model: &P) -> Self {
        let shapes: Vec<_> = model.params().iter().map(|p| Tensor2::zeros(p.tensor.rows(), p.tensor.cols())).collect();
        Self { config, m: shapes.clone(), v: shapes, step: 0 }
    }

    pub fn step<P: Parameterized>(&mut self, model: &mut P, grads: &P, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let g = grads.params();
        for (i, (p, g)) in model.params_mut().into_iter().zip(g).enumerate() {
            if p.frozen {
                continue;
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, gv), mv), vv) in p.tensor.data_mut().iter_mut().zip(g.tensor.data()).zip(m).zip(v) {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *w -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Learning rate at `step` (0-based) of `total`: linear warmup over the
/// first `warmup_frac` of steps, then cosine decay to zero.
pub fn cosine_lr(base: f64, step: usize, total: usize, warmup_frac: f64) -> f64 {
    if total == 0 {
        return base;
    }
    let warmup = ((total as f64) * warmup_frac).ceil() as usize;
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
}
