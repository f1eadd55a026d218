use super::params::ParamSet;
use super::real::Real;

/// AdamW hyperparameters and the linear warmup/decay schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl AdamConfig {
    /// Standard moments (0.9, 0.999, 1e-6) and decay 0.01, warming up over
    /// `warmup_fraction` of `total_steps`.
    pub fn new(peak_lr: f64, total_steps: u64, warmup_fraction: f64) -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
            peak_lr,
            warmup_steps: libm::round(warmup_fraction * total_steps as f64) as u64,
            total_steps,
        }
    }

    /// Learning rate applied by the update with zero-based index `step`:
    /// linear ramp to `peak_lr` over the warmup, then linear decay reaching
    /// zero at `total_steps`.
    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return 0.0;
        }
        if step < self.warmup_steps {
            return self.peak_lr * (step + 1) as f64 / self.warmup_steps as f64;
        }
        self.peak_lr * (self.total_steps - step) as f64 / (self.total_steps - self.warmup_steps) as f64
    }
}

/// Moment accumulators shaped like the parameters, plus the update count.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamSet<T>,
    pub second_moment: ParamSet<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        OptimizerState {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }

    pub fn shape_matches(&self, params: &ParamSet<T>) -> bool {
        let same = |a: &ParamSet<T>| {
            a.tensors.len() == params.tensors.len()
                && a.tensors
                    .iter()
                    .zip(&params.tensors)
                    .all(|(x, y)| x.name == y.name && x.shape == y.shape)
        };
        same(&self.first_moment) && same(&self.second_moment)
    }

    /// One bias-corrected AdamW update at the scheduled learning rate, applied
    /// to tensors accepted by `trainable`. Returns the learning rate used.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>, trainable: impl Fn(&str) -> bool) -> f64 {
        let c = self.config;
        let lr = c.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(c.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(c.beta2, t as f64);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let step_size = T::of(lr / bc1);
        let inv_bc2 = T::of(1.0 / bc2);
        let eps = T::of(c.eps);
        let decay = T::of(lr * c.weight_decay);
        for (i, p) in params.tensors.iter_mut().enumerate() {
            if !trainable(&p.name) {
                continue;
            }
            let decays = p.decays();
            let g = &grads.tensors[i].data;
            let m = &mut self.first_moment.tensors[i].data;
            let v = &mut self.second_moment.tensors[i].data;
            for j in 0..p.data.len() {
                m[j] = b1 * m[j] + one_b1 * g[j];
                v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
                let denom = (v[j] * inv_bc2).sqrt() + eps;
                let mut delta = step_size * m[j] / denom;
                if decays {
                    delta += decay * p.data[j];
                }
                p.data[j] -= delta;
            }
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays_to_zero() {
        let c = AdamConfig::new(1.0, 100, 0.1);
        assert_eq!(c.warmup_steps, 10);
        assert!((c.lr_at(0) - 0.1).abs() < 1e-12);
        assert!((c.lr_at(9) - 1.0).abs() < 1e-12);
        assert!((c.lr_at(10) - 1.0).abs() < 1e-12);
        assert!((c.lr_at(55) - 0.5).abs() < 1e-12);
        assert!(c.lr_at(99) > 0.0);
        assert_eq!(c.lr_at(100), 0.0);
        let lrs: alloc::vec::Vec<f64> = (10..100).map(|s| c.lr_at(s)).collect();
        assert!(lrs.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_warmup_starts_at_peak() {
        let c = AdamConfig::new(2e-5, 10, 0.0);
        assert_eq!(c.lr_at(0), 2e-5);
    }
}
