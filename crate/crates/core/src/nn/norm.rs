//! Batch normalization over NCHW tensors.
//!
//! Training mode normalizes by batch statistics and updates running
//! estimates; eval mode is a fixed per-channel affine map, which keeps
//! sliding-window inference translation covariant.

use ndarray::{Array1, Array4, ArrayView4};

use super::{ParamStore, Scalar, Slot, StateStore};

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Slot,
    pub beta: Slot,
    /// Running mean followed by running variance, each `channels` long.
    pub state: Slot,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

/// Per-channel statistics saved by the training forward pass.
#[derive(Debug, Clone)]
pub struct BnSaved<T> {
    pub mean: Array1<T>,
    pub inv_std: Array1<T>,
}

impl BatchNorm {
    pub fn forward_train<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        st: &mut StateStore<T>,
        x: &ArrayView4<T>,
    ) -> (Array4<T>, BnSaved<T>) {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.channels, "batchnorm channels");
        let m = (n * h * w) as f64;
        let mut mean = Array1::<T>::zeros(c);
        let mut inv_std = Array1::<T>::zeros(c);
        let mut var = vec![0.0f64; c];
        let xs = x.as_slice().expect("contiguous input");
        for ch in 0..c {
            let mut acc = 0.0f64;
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                for v in &xs[base..base + h * w] {
                    acc += v.to_f64();
                }
            }
            let mu = acc / m;
            let mut vacc = 0.0f64;
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                for v in &xs[base..base + h * w] {
                    let d = v.to_f64() - mu;
                    vacc += d * d;
                }
            }
            let va = vacc / m;
            mean[ch] = T::from_f64(mu);
            var[ch] = va;
            inv_std[ch] = T::from_f64(1.0 / (va + self.eps).sqrt());
        }
        // running estimates
        {
            let state = st.get_mut(self.state);
            for ch in 0..c {
                let rm = state[ch].to_f64();
                let rv = state[c + ch].to_f64();
                state[ch] =
                    T::from_f64((1.0 - self.momentum) * rm + self.momentum * mean[ch].to_f64());
                state[c + ch] = T::from_f64((1.0 - self.momentum) * rv + self.momentum * var[ch]);
            }
        }
        let y = self.affine(ps, x, &mean, &inv_std);
        (y, BnSaved { mean, inv_std })
    }

    pub fn forward_eval<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        st: &StateStore<T>,
        x: &ArrayView4<T>,
    ) -> Array4<T> {
        let c = self.channels;
        let state = st.get(self.state);
        let mean = Array1::from_iter(state[..c].iter().copied());
        let inv_std = Array1::from_iter(
            state[c..2 * c]
                .iter()
                .map(|v| T::from_f64(1.0 / (v.to_f64() + self.eps).sqrt())),
        );
        self.affine(ps, x, &mean, &inv_std)
    }

    fn affine<T: Scalar>(
        &self,
        ps: &ParamStore<T>,
        x: &ArrayView4<T>,
        mean: &Array1<T>,
        inv_std: &Array1<T>,
    ) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let gamma = ps.get(self.gamma);
        let beta = ps.get(self.beta);
        let mut y = Array4::<T>::zeros((n, c, h, w));
        let xs = x.as_slice().unwrap();
        let ys = y.as_slice_mut().unwrap();
        for b in 0..n {
            for ch in 0..c {
                let base = (b * c + ch) * h * w;
                let scale = gamma[ch] * inv_std[ch];
                let shift = beta[ch] - mean[ch] * scale;
                for i in base..base + h * w {
                    ys[i] = xs[i] * scale + shift;
                }
            }
        }
        y
    }

    /// Training-mode backward. Returns d(input), accumulates dgamma/dbeta.
    pub fn backward<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        saved: &BnSaved<T>,
        x: &ArrayView4<T>,
        dy: &ArrayView4<T>,
    ) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let m = T::from_f64((n * h * w) as f64);
        let xs = x.as_slice().unwrap();
        let dys = dy.as_slice().unwrap();
        let mut dx = Array4::<T>::zeros((n, c, h, w));
        let gamma_own: Vec<T> = ps.get(self.gamma).to_vec();
        ps.ensure_grads();
        for ch in 0..c {
            let mu = saved.mean[ch];
            let istd = saved.inv_std[ch];
            // reductions: sum(dy), sum(dy * x_hat)
            let mut sum_dy = T::from_f64(0.0);
            let mut sum_dy_xhat = T::from_f64(0.0);
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                for i in base..base + h * w {
                    let xhat = (xs[i] - mu) * istd;
                    sum_dy = sum_dy + dys[i];
                    sum_dy_xhat = sum_dy_xhat + dys[i] * xhat;
                }
            }
            {
                let ggamma = ps.grad_slice_mut(self.gamma);
                ggamma[ch] = ggamma[ch] + sum_dy_xhat;
            }
            {
                let gbeta = ps.grad_slice_mut(self.beta);
                gbeta[ch] = gbeta[ch] + sum_dy;
            }
            let k = gamma_own[ch] * istd / m;
            let dxs = dx.as_slice_mut().unwrap();
            for b in 0..n {
                let base = (b * c + ch) * h * w;
                for i in base..base + h * w {
                    let xhat = (xs[i] - mu) * istd;
                    dxs[i] = k * (m * dys[i] - sum_dy - xhat * sum_dy_xhat);
                }
            }
        }
        dx
    }
}
