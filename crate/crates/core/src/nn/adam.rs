//! Adam optimizer over a flat parameter vector.

use super::{ParamStore, Scalar};

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, n_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    /// One update from the gradients currently held by the store.
    pub fn step<T: Scalar>(&mut self, ps: &mut ParamStore<T>) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let n = ps.len();
        debug_assert_eq!(n, self.m.len());
        for i in 0..n {
            let g = ps.grads()[i].to_f64();
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let upd = self.lr * m_hat / (v_hat.sqrt() + self.eps);
            let w = ps.values()[i].to_f64();
            ps.values_mut()[i] = T::from_f64(w - upd);
        }
    }
}
