use crate::numerics::{Gradients, LrGroup, ParamStore};

/// Linear warmup to `peak` over `warmup_steps`, then linear decay to zero at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).round() as usize,
            total_steps,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let (w, t) = (self.warmup_steps, self.total_steps);
        if step <= w {
            if w == 0 {
                self.peak
            } else {
                self.peak * step as f64 / w as f64
            }
        } else if step >= t {
            0.0
        } else {
            self.peak * (t - step) as f64 / (t - w) as f64
        }
    }
}

/// Adam with a per-group learning-rate multiplier.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub new_layer_multiplier: f64,
    steps: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(store: &ParamStore, new_layer_multiplier: f64) -> Self {
        let zeros: Vec<Vec<f32>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            new_layer_multiplier,
            steps: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; parameters without a gradient still advance their moments with zero.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients<f32>, lr: f64) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps);
        let c2 = 1.0 - b2.powi(self.steps);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get_mut(id);
            let group_lr = match p.lr_group {
                LrGroup::Base => lr,
                LrGroup::NewLayer => lr * self.new_layer_multiplier,
            };
            let step_size = (group_lr / c1) as f32;
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let g = grads.get(id);
            for (i, w) in p.tensor.data_mut().iter_mut().enumerate() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = (b1 as f32) * m[i] + (1.0 - b1 as f32) * gi;
                v[i] = (b2 as f32) * v[i] + (1.0 - b2 as f32) * gi * gi;
                let v_hat = (v[i] as f64 / c2).sqrt() as f32;
                *w -= step_size * m[i] / (v_hat + self.eps as f32);
            }
        }
    }
}
