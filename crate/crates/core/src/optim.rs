//! First-order optimizers and learning-rate schedules shared by the trainers.

use crate::autodiff::Tensor;

/// Adam-style adaptive update. With `beta1 = 0` it is momentum-free
/// (RMSProp with bias correction).
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn momentum_free() -> Self {
        Self::new(0.0, 0.999, 1e-8)
    }

    pub fn describe(&self) -> String {
        format!(
            "adaptive first-order (beta1={}, beta2={}, eps={:e})",
            self.beta1, self.beta2, self.eps
        )
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        self.step += 1;
        let bc1 = if self.beta1 > 0.0 {
            1.0 - self.beta1.powi(self.step as i32)
        } else {
            1.0
        };
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *x -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Global L2 norm of a gradient list.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.norm_sq()).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let n = global_norm(grads);
    if n > max_norm && n > 0.0 {
        let s = max_norm / n;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    n
}

/// Linear warmup followed by cosine decay to `min_lr_ratio · base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub min_lr_ratio: f64,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup_steps {
            return self.base_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1);
        let progress = ((step - self.warmup_steps) as f64 / span as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.base_lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}
