//! Adam with bias-corrected moments.

use crate::param::ParamStore;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    /// One update of every parameter from its accumulated `grad`.
    pub fn step<T: Real>(&self, params: &mut ParamStore<T>) {
        let (b1, b2) = (T::from_f64(self.beta1), T::from_f64(self.beta2));
        let (one_b1, one_b2) = (T::from_f64(1.0 - self.beta1), T::from_f64(1.0 - self.beta2));
        let eps = T::from_f64(self.eps);
        for p in params.iter_mut() {
            p.adam.step += 1;
            let t = p.adam.step as i32;
            let c1 = T::from_f64(1.0 - self.beta1.powi(t));
            let c2 = T::from_f64(1.0 - self.beta2.powi(t));
            let lr = T::from_f64(self.lr);
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                let m = b1 * p.adam.m[i] + one_b1 * g[i];
                let v = b2 * p.adam.v[i] + one_b2 * g[i] * g[i];
                p.adam.m[i] = m;
                p.adam.v[i] = v;
                let m_hat = m / c1;
                let v_hat = v / c2;
                w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
