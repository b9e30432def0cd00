//! Fully connected layer on [N, F] activations.

use ndarray::{Array2, ArrayView2};

use super::{ParamStore, Scalar, Slot};

#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Slot, // [out, in]
    pub bias: Slot,   // [out]
    pub in_features: usize,
    pub out_features: usize,
}

impl Dense {
    fn weight_mat<'a, T: Scalar>(&self, ps: &'a ParamStore<T>) -> ArrayView2<'a, T> {
        ArrayView2::from_shape((self.out_features, self.in_features), ps.get(self.weight))
            .expect("dense weight slot shape")
    }

    pub fn forward<T: Scalar>(&self, ps: &ParamStore<T>, x: &ArrayView2<T>) -> Array2<T> {
        assert_eq!(x.ncols(), self.in_features, "dense input width");
        let mut y = x.dot(&self.weight_mat(ps).t()); // [N, out]
        let bias = ps.get(self.bias);
        for mut row in y.rows_mut() {
            for (v, b) in row.iter_mut().zip(bias) {
                *v = *v + *b;
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        ps: &mut ParamStore<T>,
        x: &ArrayView2<T>,
        dy: &ArrayView2<T>,
    ) -> Array2<T> {
        let dw = dy.t().dot(x); // [out, in]
        let dx = dy.dot(&self.weight_mat(ps).to_owned()); // [N, in]
        ps.ensure_grads();
        {
            let gw = ps.grad_slice_mut(self.weight);
            for (g, d) in gw.iter_mut().zip(dw.iter()) {
                *g = *g + *d;
            }
        }
        {
            let gb = ps.grad_slice_mut(self.bias);
            for (o, g) in gb.iter_mut().enumerate() {
                let mut acc = T::from_f64(0.0);
                for n in 0..dy.nrows() {
                    acc = acc + dy[[n, o]];
                }
                *g = *g + acc;
            }
        }
        dx
    }
}
